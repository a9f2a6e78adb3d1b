//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fdm_recover::detector::{EventTruth, Species};

/// Direct summation `X(k) = sum_n x(n) exp(-2 pi i k n / N)`.
pub fn brute_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * j) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Direct summation `x(n) = (1/N) sum_k X(k) exp(2 pi i k n / N)`.
pub fn brute_idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|j| {
            x.iter()
                .enumerate()
                .map(|(k, v)| v * Complex64::from_polar(1.0, 2.0 * PI * ((k * j) % n) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Direct summation `y(n) = sum_{m <= n} x(m) h(n - m)` for `n < len(x)`.
pub fn brute_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|n| (0..=n).filter(|&m| n - m < h.len()).map(|m| x[m] * h[n - m]).sum()).collect()
}

/// Largest absolute deviation relative to the largest reference magnitude.
pub fn rel_err_c(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale
}

/// Real-valued counterpart of [`rel_err_c`].
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale
}

/// Standard-normal samples from a fixed seed.
pub fn gaussian_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Complex standard-normal samples from a fixed seed.
pub fn complex_gaussian_vec(n: usize, seed: u64) -> Vec<Complex64> {
    let v = gaussian_vec(2 * n, seed);
    v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// Noise-free event without shape fluctuations.
pub fn event(energy_kevee: f64, species: Species, t_arrival: f64) -> EventTruth {
    EventTruth { energy_kevee, t_arrival, species, detector_id: 0, photoelectrons: 0.0, shape_deviate: 0.0 }
}

/// Closed-form figure of merit of two Gaussian populations.
pub fn two_gaussian_fom(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let fwhm = 2.0 * (2.0 * 2.0_f64.ln()).sqrt();
    (m2 - m1).abs() / (fwhm * (s1 + s2))
}

/// Closed-form resonator transfer function: the z-transform of
/// `g r^n sin(n theta)` on the unit circle,
/// `g r sin(theta) z^-1 / (1 - 2 r cos(theta) z^-1 + r^2 z^-2)`.
/// Exact for an infinitely long response; truncation to `N` samples changes
/// it by a relative amount of order `r^N`.
pub fn resonator_z_transform(gain: f64, f0: f64, q: f64, dt: f64, f: f64) -> Complex64 {
    let r = (-PI * f0 / q * dt).exp();
    let theta = 2.0 * PI * f0 * dt;
    let zi = Complex64::from_polar(1.0, -2.0 * PI * f * dt);
    gain * r * theta.sin() * zi / (1.0 - 2.0 * r * theta.cos() * zi + r * r * zi * zi)
}
