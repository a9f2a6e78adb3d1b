//! System identification of a resonator chain from paired noise records.
//!
//! Each record pair contributes its circular cross-spectrum `Y X*` and
//! auto-spectrum `|X|^2`; after averaging, the transfer function is their
//! ratio. This equals dividing the DFTs of the averaged circular
//! correlations `r_yx` and `r_xx`.
//!
//! With [`LagWeighting::LagCount`] the time-domain estimate is rescaled by
//! `N / (N - j)` at lag `j`, removing the `(N - j) / N` attenuation that a
//! finite record imposes on a causal response driven by white noise.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{dft, dft_complex, idft_complex, Spectrum, Trace};

/// Normalisation of the correlation lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagWeighting {
    /// Plain `1/N` normalisation; exact for impulse excitation.
    Biased,
    /// Unbiased per-lag normalisation for random excitation.
    #[default]
    LagCount,
}

/// Estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdConfig {
    /// Lag normalisation.
    pub weighting: LagWeighting,
    /// Lags below this fraction of the record are rescaled in lag-count mode.
    pub max_lag_fraction: f64,
    /// Bins whose input power is below this fraction of the maximum are invalid.
    pub invalid_threshold: f64,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self { weighting: LagWeighting::LagCount, max_lag_fraction: 0.9, invalid_threshold: 1e-6 }
    }
}

impl SysIdConfig {
    /// Checks the lag fraction and threshold.
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lag_fraction > 0.0 && self.max_lag_fraction < 1.0) {
            return Err(Error::InvalidConfig("max lag fraction must lie in (0, 1)".into()));
        }
        if !(self.invalid_threshold >= 0.0 && self.invalid_threshold < 1.0) {
            return Err(Error::InvalidConfig("invalid-bin threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Estimated transfer function with its bin validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseEstimate {
    /// Transfer function on the record's DFT grid; invalid bins hold zero.
    pub transfer: Spectrum,
    /// False where the input carried too little power.
    pub valid: Vec<bool>,
    /// Number of record pairs averaged.
    pub records_averaged: usize,
}

impl ImpulseEstimate {
    /// Time-domain impulse response.
    pub fn impulse_response(&self, dt: f64) -> Result<Trace> {
        let h: Vec<f64> = idft_complex(self.transfer.bins()).iter().map(|c| c.re).collect();
        Trace::new(h, dt)
    }
}

/// Running sums of cross- and auto-spectra over record pairs.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    cross: Vec<Complex64>,
    auto: Vec<f64>,
    records: usize,
    dt: f64,
}

impl CorrelationAccumulator {
    /// Empty accumulator for records of `len` samples spaced by `dt`.
    pub fn new(len: usize, dt: f64) -> Self {
        Self { cross: vec![Complex64::new(0.0, 0.0); len], auto: vec![0.0; len], records: 0, dt }
    }

    /// Number of pairs accumulated.
    pub fn records(&self) -> usize {
        self.records
    }

    /// Adds one (input, output) pair.
    pub fn push(&mut self, input: &Trace, output: &Trace) -> Result<()> {
        for t in [input, output] {
            if t.len() != self.auto.len() {
                return Err(Error::LengthMismatch { expected: self.auto.len(), found: t.len() });
            }
        }
        let x = dft(input);
        let y = dft(output);
        for (k, (xk, yk)) in x.bins().iter().zip(y.bins()).enumerate() {
            self.cross[k] += yk * xk.conj();
            self.auto[k] += xk.norm_sqr();
        }
        self.records += 1;
        Ok(())
    }

    /// Transfer function from the accumulated spectra.
    pub fn estimate(&self, cfg: &SysIdConfig) -> Result<ImpulseEstimate> {
        cfg.validate()?;
        if self.records == 0 {
            return Err(Error::InvalidInput("no calibration records accumulated".into()));
        }
        let n = self.auto.len();
        let peak = self.auto.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return Err(Error::InvalidInput("calibration input carries no power".into()));
        }
        let valid: Vec<bool> = self.auto.iter().map(|&p| p >= cfg.invalid_threshold * peak && p > 0.0).collect();
        let mut bins: Vec<Complex64> =
            (0..n).map(|k| if valid[k] { self.cross[k] / self.auto[k] } else { Complex64::new(0.0, 0.0) }).collect();
        if cfg.weighting == LagWeighting::LagCount {
            let mut h = idft_complex(&bins);
            let limit = (cfg.max_lag_fraction * n as f64) as usize;
            for (j, v) in h.iter_mut().enumerate().take(limit) {
                *v = Complex64::new(v.re * n as f64 / (n - j) as f64, 0.0);
            }
            h.iter_mut().skip(limit).for_each(|v| v.im = 0.0);
            bins = dft_complex(&h);
            bins.iter_mut().zip(&valid).filter(|(_, ok)| !**ok).for_each(|(b, _)| *b = Complex64::new(0.0, 0.0));
        }
        let df = 1.0 / (n as f64 * self.dt);
        Ok(ImpulseEstimate { transfer: Spectrum::new(bins, df)?, valid, records_averaged: self.records })
    }
}

/// Estimates the transfer function from (input, output) record pairs.
pub fn estimate_impulse_response(pairs: &[(Trace, Trace)], cfg: &SysIdConfig) -> Result<ImpulseEstimate> {
    let first = pairs.first().ok_or_else(|| Error::InvalidInput("no calibration records".into()))?;
    let mut acc = CorrelationAccumulator::new(first.0.len(), first.0.dt());
    for (x, y) in pairs {
        acc.push(x, y)?;
    }
    acc.estimate(cfg)
}

/// Relative RMS difference between two transfer functions over the
/// non-negative frequencies up to `band_hz`.
pub fn transfer_relative_rms(estimate: &Spectrum, reference: &Spectrum, band_hz: f64) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch { expected: reference.len(), found: estimate.len() });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=reference.len() / 2 {
        if reference.frequency(k) <= band_hz {
            num += (estimate.bins()[k] - reference.bins()[k]).norm_sqr();
            den += reference.bins()[k].norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("reference has no power in band".into()));
    }
    Ok((num / den).sqrt())
}

/// Diagnostics on the whiteness of calibration input records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    /// Records inspected.
    pub records: usize,
    /// RMS of the averaged autocorrelation at non-zero lags over its zero-lag value.
    pub sidelobe_rms_ratio: f64,
    /// Largest absolute non-zero-lag autocorrelation over its zero-lag value.
    pub sidelobe_max_ratio: f64,
    /// Acceptance bound `3 / sqrt(M N)` on the RMS sidelobe ratio.
    pub sidelobe_bound: f64,
    /// Geometric over arithmetic mean of the averaged power spectrum in band.
    pub spectral_flatness: f64,
    /// Both the sidelobe and flatness checks pass.
    pub pass: bool,
    /// Human-readable findings.
    pub notes: Vec<String>,
}

/// Minimum spectral flatness accepted as white.
pub const MIN_FLATNESS: f64 = 0.5;

/// Checks that calibration inputs are close to white over `0..=band_hz`.
pub fn whiten_check(records: &[Trace], band_hz: f64) -> Result<WhitenessReport> {
    let first = records.first().ok_or_else(|| Error::InvalidInput("no records to check".into()))?;
    let n = first.len();
    let mut power = vec![0.0; n];
    for r in records {
        if r.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: r.len() });
        }
        dft(r).bins().iter().zip(power.iter_mut()).for_each(|(x, p)| *p += x.norm_sqr());
    }
    let spectrum: Vec<Complex64> = power.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    let acf: Vec<f64> = idft_complex(&spectrum).iter().map(|c| c.re).collect();
    let mut notes = Vec::new();
    let (sidelobe_rms_ratio, sidelobe_max_ratio) = if acf[0] > 0.0 {
        let lags = &acf[1..=n / 2];
        let rms = (lags.iter().map(|v| v * v).sum::<f64>() / lags.len().max(1) as f64).sqrt();
        let max = lags.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (rms / acf[0], max / acf[0])
    } else {
        notes.push("records carry no power".into());
        (f64::INFINITY, f64::INFINITY)
    };
    let df = 1.0 / (n as f64 * first.dt());
    let band: Vec<f64> = (1..=n / 2).filter(|&k| k as f64 * df <= band_hz).map(|k| power[k]).collect();
    let spectral_flatness = if band.is_empty() {
        notes.push("analysis band contains no bins".into());
        0.0
    } else if band.iter().any(|&p| p <= 0.0) {
        notes.push("zero power in part of the band".into());
        0.0
    } else {
        let log_mean = band.iter().map(|p| p.ln()).sum::<f64>() / band.len() as f64;
        let mean = band.iter().sum::<f64>() / band.len() as f64;
        log_mean.exp() / mean
    };
    let sidelobe_bound = 3.0 / ((records.len() * n) as f64).sqrt();
    let sidelobes_ok = sidelobe_rms_ratio < sidelobe_bound;
    let flat_ok = spectral_flatness >= MIN_FLATNESS;
    if !sidelobes_ok {
        notes.push(format!("autocorrelation sidelobes {sidelobe_rms_ratio:.3e} exceed bound {sidelobe_bound:.3e}"));
    }
    if !flat_ok {
        notes.push(format!("spectral flatness {spectral_flatness:.3} below {MIN_FLATNESS}"));
    }
    Ok(WhitenessReport {
        records: records.len(),
        sidelobe_rms_ratio,
        sidelobe_max_ratio,
        sidelobe_bound,
        spectral_flatness,
        pass: sidelobes_ok && flat_ok,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{resonator_impulse_response, DigitizerSpec, ResonatorSpec};
    use crate::signal::convolve;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn h() -> Trace {
        let r = ResonatorSpec { id: 0, f0_hz: 7e6, q_factor: 12.0, gain: 0.34 };
        resonator_impulse_response(&r, &DigitizerSpec::default()).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trace::new((0..n).map(|_| StandardNormal.sample(&mut rng)).collect(), 2e-9).unwrap()
    }

    #[test]
    fn impulse_excitation_is_exact_with_biased_weighting() {
        let h = h();
        let x = Trace::impulse(h.len(), h.dt()).unwrap();
        let cfg = SysIdConfig { weighting: LagWeighting::Biased, ..Default::default() };
        let est = estimate_impulse_response(&[(x, h.clone())], &cfg).unwrap();
        let back = est.impulse_response(h.dt()).unwrap();
        for (a, b) in back.samples().iter().zip(h.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_is_rejected() {
        let z = Trace::zeros(64, 1.0).unwrap();
        assert!(estimate_impulse_response(&[(z.clone(), z)], &SysIdConfig::default()).is_err());
    }

    #[test]
    fn lag_count_weighting_recovers_response_from_noise() {
        let h = h();
        let mut acc = CorrelationAccumulator::new(h.len(), h.dt());
        for s in 0..400 {
            let x = noise(h.len(), s);
            let y = convolve(&x, &h).unwrap();
            acc.push(&x, &y).unwrap();
        }
        let truth = dft(&h);
        let unbiased = acc.estimate(&SysIdConfig::default()).unwrap();
        let biased = acc.estimate(&SysIdConfig { weighting: LagWeighting::Biased, ..Default::default() }).unwrap();
        let e_unbiased = transfer_relative_rms(&unbiased.transfer, &truth, 180e6).unwrap();
        let e_biased = transfer_relative_rms(&biased.transfer, &truth, 180e6).unwrap();
        assert!(e_unbiased < 0.03, "{e_unbiased}");
        assert!(e_biased > 0.05, "{e_biased}");
    }

    #[test]
    fn white_noise_passes_and_tones_fail() {
        let recs: Vec<Trace> = (0..20).map(|s| noise(2000, 100 + s)).collect();
        let report = whiten_check(&recs, 180e6).unwrap();
        assert!(report.pass, "{report:?}");
        let tone: Vec<Trace> = (0..20)
            .map(|_| {
                let s = (0..2000).map(|n| (2.0 * std::f64::consts::PI * 1e6 * n as f64 * 2e-9).sin()).collect();
                Trace::new(s, 2e-9).unwrap()
            })
            .collect();
        assert!(!whiten_check(&tone, 180e6).unwrap().pass);
        let dc = vec![Trace::new(vec![0.5; 2000], 2e-9).unwrap()];
        let report = whiten_check(&dc, 180e6).unwrap();
        assert!(!report.pass);
        assert_eq!(report.spectral_flatness, 0.0);
    }
}
