//! Sampled traces, spectra and the discrete transforms that connect them.
//!
//! The forward transform is unnormalised and the inverse carries the `1/N`
//! factor, so `idft(dft(x)) == x` and Parseval reads
//! `sum |x|^2 == sum |X|^2 / N`.
//!
//! ```
//! use fdm_recover::signal::{dft, idft, Trace};
//! let x = Trace::new(vec![1.0, 2.0, 3.0, 4.0], 2e-9).unwrap();
//! let back = idft(&dft(&x));
//! assert!((back.samples()[2] - 3.0).abs() < 1e-12);
//! ```

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalised in-place FFT of any length.
fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    if buf.len() <= 1 {
        return;
    }
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let plan = if inverse { planner.plan_fft_inverse(buf.len()) } else { planner.plan_fft_forward(buf.len()) };
        plan.process(buf);
    });
}

/// Forward DFT of a complex sequence, `X(k) = sum x(n) exp(-2 pi i k n / N)`.
pub fn dft_complex(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    fft_in_place(&mut buf, false);
    buf
}

/// Inverse DFT of a complex sequence including the `1/N` factor.
pub fn idft_complex(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    fft_in_place(&mut buf, true);
    let scale = 1.0 / buf.len().max(1) as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// A uniformly sampled, real-valued record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<f64>,
    dt: f64,
    t0: f64,
}

impl Trace {
    /// Builds a trace starting at `t = 0`. Requires at least one finite
    /// sample and a positive, finite sample interval.
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        Self::with_start(samples, dt, 0.0)
    }

    /// Builds a trace whose first sample sits at time `t0`.
    pub fn with_start(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("trace must contain at least one sample".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("sample interval must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidInput("trace start time must be finite".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, dt, t0 })
    }

    /// All-zero trace of length `n`.
    pub fn zeros(n: usize, dt: f64) -> Result<Self> {
        Self::new(vec![0.0; n], dt)
    }

    /// Unit impulse at index 0.
    pub fn impulse(n: usize, dt: f64) -> Result<Self> {
        let mut t = Self::zeros(n, dt)?;
        t.samples[0] = 1.0;
        Ok(t)
    }

    /// Sample values.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Mutable access to the sample values.
    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// Consumes the trace and returns its samples.
    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Sample interval in seconds.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the first sample in seconds.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a trace holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of sample `n`.
    pub fn time_of(&self, n: f64) -> f64 {
        self.t0 + n * self.dt
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Largest absolute sample value.
    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Multiplies every sample by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { samples: self.samples.iter().map(|v| v * k).collect(), dt: self.dt, t0: self.t0 }
    }

    /// Element-wise sum of two traces of equal length and sample interval.
    pub fn add(&self, other: &Trace) -> Result<Self> {
        check_same_len(self.len(), other.len())?;
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            dt: self.dt,
            t0: self.t0,
        })
    }
}

/// A complex spectrum on the DFT grid with bin spacing `df`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    df: f64,
}

impl Spectrum {
    /// Wraps DFT bins; `df` must be positive.
    pub fn new(bins: Vec<Complex64>, df: f64) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidInput("spectrum must contain at least one bin".into()));
        }
        if !(df.is_finite() && df > 0.0) {
            return Err(Error::InvalidInput(format!("bin spacing must be positive, got {df}")));
        }
        Ok(Self { bins, df })
    }

    /// Complex bin values in DFT order.
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Mutable bin values.
    pub fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    /// Bin spacing in hertz.
    pub fn df(&self) -> f64 {
        self.df
    }

    /// Number of bins.
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    /// Always false; a spectrum holds at least one bin.
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Signed frequency of bin `k`; bins above `N/2` map to negative
    /// frequencies and the Nyquist bin of an even-length grid is positive.
    pub fn frequency(&self, k: usize) -> f64 {
        signed_bin_frequency(k, self.bins.len(), self.df)
    }

    /// True when `X(N-k) == conj(X(k))` for all bins within `tol`
    /// relative to the largest magnitude.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        let n = self.bins.len();
        let scale = self.bins.iter().fold(0.0_f64, |m, v| m.max(v.norm())).max(f64::MIN_POSITIVE);
        (0..n).all(|k| (self.bins[k] - self.bins[(n - k) % n].conj()).norm() <= tol * scale)
    }
}

/// Signed frequency of DFT bin `k` on an `n`-point grid.
pub fn signed_bin_frequency(k: usize, n: usize, df: f64) -> f64 {
    if k <= n / 2 {
        k as f64 * df
    } else {
        (k as f64 - n as f64) * df
    }
}

fn check_same_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { expected, found });
    }
    Ok(())
}

/// Forward DFT of a real trace; the bin spacing is `1 / (N dt)`.
pub fn dft(x: &Trace) -> Spectrum {
    let buf: Vec<Complex64> = x.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let df = 1.0 / (x.len() as f64 * x.dt);
    Spectrum { bins: dft_complex(&buf), df }
}

/// Inverse DFT returning the real part; the imaginary part is discarded.
pub fn idft(spectrum: &Spectrum) -> Trace {
    let out = idft_complex(&spectrum.bins);
    let dt = 1.0 / (spectrum.len() as f64 * spectrum.df);
    Trace { samples: out.iter().map(|c| c.re).collect(), dt, t0: 0.0 }
}

fn padded_len(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

/// Precomputed spectrum of a fixed impulse response for repeated truncated
/// linear convolution with records of one length.
#[derive(Debug, Clone)]
pub struct ConvolutionKernel {
    padded: Vec<Complex64>,
    len: usize,
}

impl ConvolutionKernel {
    /// Prepares `h` for convolution with records of the same length.
    pub fn new(h: &Trace) -> Self {
        let len = h.len();
        let mut padded = vec![Complex64::new(0.0, 0.0); padded_len(len)];
        for (p, &v) in padded.iter_mut().zip(&h.samples) {
            p.re = v;
        }
        fft_in_place(&mut padded, false);
        Self { padded, len }
    }

    /// Record length this kernel accepts.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; kernels hold at least one sample.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Truncated linear convolution of `x` with the stored response.
    pub fn apply(&self, x: &Trace) -> Result<Trace> {
        check_same_len(self.len, x.len())?;
        let m = self.padded.len();
        let mut a = vec![Complex64::new(0.0, 0.0); m];
        for (p, &v) in a.iter_mut().zip(&x.samples) {
            p.re = v;
        }
        fft_in_place(&mut a, false);
        a.iter_mut().zip(&self.padded).for_each(|(u, v)| *u *= v);
        fft_in_place(&mut a, true);
        let scale = 1.0 / m as f64;
        let samples = a[..self.len].iter().map(|c| c.re * scale).collect();
        Ok(Trace { samples, dt: x.dt, t0: x.t0 })
    }
}

/// Truncated linear convolution `y(n) = sum_{m<=n} x(m) h(n-m)` of equal-length
/// traces. The output keeps the input length and the start time of `x`.
pub fn convolve(x: &Trace, h: &Trace) -> Result<Trace> {
    check_same_len(x.len(), h.len())?;
    ConvolutionKernel::new(h).apply(x)
}

/// Biased linear cross-correlation `r(m) = (1/N) sum_n y(n+m) x(n)` for
/// lags `m = 0..N`.
pub fn cross_correlate(y: &Trace, x: &Trace) -> Result<Vec<f64>> {
    check_same_len(y.len(), x.len())?;
    let n = y.len();
    let m = padded_len(n);
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    let mut b = a.clone();
    for i in 0..n {
        a[i].re = y.samples[i];
        b[i].re = x.samples[i];
    }
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v.conj());
    fft_in_place(&mut a, true);
    let scale = 1.0 / (m as f64 * n as f64);
    Ok(a[..n].iter().map(|c| c.re * scale).collect())
}

/// Biased circular cross-correlation `r(m) = (1/N) sum_n y((n+m) mod N) x(n)`.
pub fn circular_cross_correlate(y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_same_len(y.len(), x.len())?;
    let n = y.len();
    let mut a: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut b: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v.conj());
    fft_in_place(&mut a, true);
    let scale = 1.0 / (n as f64 * n as f64);
    Ok(a.iter().map(|c| c.re * scale).collect())
}

/// Filter family used for post-deconvolution noise suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Maximally flat low-pass.
    ButterworthLowpass,
}

/// Phase behaviour of the applied filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPhase {
    /// Real magnitude-only mask; no group delay.
    #[default]
    ZeroPhase,
    /// Analog prototype response including its phase.
    Causal,
}

/// Low-pass filter applied in the frequency domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Filter family.
    pub kind: FilterKind,
    /// Filter order, at least 1.
    pub order: u32,
    /// -3 dB cutoff in hertz.
    pub cutoff_hz: f64,
    /// Zero-phase mask or causal prototype.
    #[serde(default)]
    pub phase: FilterPhase,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { kind: FilterKind::ButterworthLowpass, order: 4, cutoff_hz: 180e6, phase: FilterPhase::ZeroPhase }
    }
}

impl FilterSpec {
    /// Checks order and cutoff.
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidConfig("filter order must be at least 1".into()));
        }
        if !(self.cutoff_hz.is_finite() && self.cutoff_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("filter cutoff must be positive, got {}", self.cutoff_hz)));
        }
        Ok(())
    }

    /// Magnitude response `1 / sqrt(1 + (f/fc)^(2n))` at frequency `f`.
    pub fn gain(&self, f: f64) -> f64 {
        let r = (f.abs() / self.cutoff_hz).powi(2 * self.order as i32);
        1.0 / (1.0 + r).sqrt()
    }

    /// Complex response at signed frequency `f`.
    pub fn response(&self, f: f64) -> Complex64 {
        match self.phase {
            FilterPhase::ZeroPhase => Complex64::new(self.gain(f), 0.0),
            FilterPhase::Causal => {
                let n = self.order as f64;
                let s = Complex64::new(0.0, f / self.cutoff_hz);
                (0..self.order).fold(Complex64::new(1.0, 0.0), |acc, k| {
                    let angle = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
                    let pole = Complex64::from_polar(1.0, angle);
                    acc / (s - pole)
                })
            }
        }
    }
}

/// Multiplies every bin by the filter response at its signed frequency.
pub fn apply_lowpass(spectrum: &Spectrum, filter: &FilterSpec) -> Spectrum {
    let n = spectrum.len();
    let bins = spectrum
        .bins
        .iter()
        .enumerate()
        .map(|(k, v)| v * filter.response(signed_bin_frequency(k, n, spectrum.df)))
        .collect();
    Spectrum { bins, df: spectrum.df }
}
