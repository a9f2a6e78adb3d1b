//! Frequency-domain recovery of anode pulses from fan-in records.
//!
//! The record spectrum is divided by the chain transfer function on valid
//! bins, a low-pass mask suppresses the noise amplified where the transfer
//! function is small, and the inverse transform yields the recovered pulse.

use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{apply_lowpass, dft, idft, FilterSpec, Spectrum, Trace};

/// Treatment of bins whose transfer magnitude is below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidBinPolicy {
    /// The recovered spectrum is zero on invalid bins.
    #[default]
    Zero,
    /// The transfer magnitude is raised to the floor, keeping its phase.
    Clamp,
}

/// Recovery settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvConfig {
    /// Post-division low-pass filter; `None` leaves the spectrum unfiltered.
    pub filter: Option<FilterSpec>,
    /// Bins with `|H| < h_floor * max |H|` are invalid.
    pub h_floor: f64,
    /// Handling of invalid bins.
    pub invalid_bin_policy: InvalidBinPolicy,
    /// Samples averaged to restore the baseline when the DC bin is invalid.
    pub baseline_window: Range<usize>,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            filter: Some(FilterSpec::default()),
            h_floor: 1e-5,
            invalid_bin_policy: InvalidBinPolicy::Zero,
            baseline_window: 8..92,
        }
    }
}

impl DeconvConfig {
    /// Checks the filter, floor and baseline window.
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        if !(self.h_floor.is_finite() && self.h_floor > 0.0 && self.h_floor < 1.0) {
            return Err(Error::InvalidConfig(format!("h_floor must lie in (0, 1), got {}", self.h_floor)));
        }
        if self.baseline_window.is_empty() {
            return Err(Error::InvalidConfig("baseline window is empty".into()));
        }
        Ok(())
    }
}

/// Validity of each transfer bin: above the relative floor and not masked out.
pub fn valid_bins(h: &Spectrum, mask: Option<&[bool]>, h_floor: f64) -> Vec<bool> {
    let peak = h.bins().iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    h.bins()
        .iter()
        .enumerate()
        .map(|(k, v)| v.norm() > 0.0 && v.norm() >= h_floor * peak && mask.is_none_or(|m| m[k]))
        .collect()
}

/// Recovers the anode signal from fan-in record `y` given transfer function
/// `h` and an optional externally supplied validity mask.
pub fn deconvolve(y: &Trace, h: &Spectrum, mask: Option<&[bool]>, cfg: &DeconvConfig) -> Result<Trace> {
    cfg.validate()?;
    if y.len() != h.len() {
        return Err(Error::LengthMismatch { expected: h.len(), found: y.len() });
    }
    if let Some(m) = mask {
        if m.len() != h.len() {
            return Err(Error::LengthMismatch { expected: h.len(), found: m.len() });
        }
    }
    if cfg.baseline_window.end > y.len() {
        return Err(Error::InvalidConfig("baseline window extends past the record".into()));
    }
    let valid = valid_bins(h, mask, cfg.h_floor);
    let peak = h.bins().iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    let floor = cfg.h_floor * peak;
    let ys = dft(y);
    let bins: Vec<Complex64> = ys
        .bins()
        .iter()
        .zip(h.bins())
        .zip(&valid)
        .map(|((&yk, &hk), &ok)| {
            if ok {
                yk / hk
            } else {
                match cfg.invalid_bin_policy {
                    InvalidBinPolicy::Clamp if hk.norm() > 0.0 && floor > 0.0 => yk / (hk / hk.norm() * floor),
                    _ => Complex64::new(0.0, 0.0),
                }
            }
        })
        .collect();
    let mut x = Spectrum::new(bins, ys.df())?;
    if let Some(f) = &cfg.filter {
        x = apply_lowpass(&x, f);
    }
    let mut out = Trace::with_start(idft(&x).into_samples(), y.dt(), y.t0())?;
    if !valid[0] {
        let w = cfg.baseline_window.clone();
        let mean = out.samples()[w.clone()].iter().sum::<f64>() / w.len() as f64;
        out.samples_mut().iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// Residual between an anode trace and its recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    /// `recovered - anode`.
    pub residual: Trace,
    /// RMS of the residual over the whole record.
    pub rms: f64,
    /// RMS over the pulse window.
    pub pulse_rms: f64,
    /// RMS over the baseline window.
    pub baseline_rms: f64,
    /// Largest absolute residual.
    pub max_abs: f64,
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Compares a recovered trace with the anode pass-through.
pub fn recovery_report(
    anode: &Trace,
    recovered: &Trace,
    baseline: Range<usize>,
    pulse: Range<usize>,
) -> Result<ResidualStats> {
    if anode.len() != recovered.len() {
        return Err(Error::LengthMismatch { expected: anode.len(), found: recovered.len() });
    }
    if baseline.end > anode.len() || pulse.end > anode.len() {
        return Err(Error::InvalidInput("report window extends past the record".into()));
    }
    let d: Vec<f64> = recovered.samples().iter().zip(anode.samples()).map(|(r, a)| r - a).collect();
    let stats = ResidualStats {
        rms: rms(&d),
        pulse_rms: rms(&d[pulse]),
        baseline_rms: rms(&d[baseline]),
        max_abs: d.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        residual: Trace::with_start(d, anode.dt(), anode.t0())?,
    };
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::idft_complex;

    fn spectrum_of(values: Vec<f64>) -> Spectrum {
        let t = Trace::new(values, 1.0).unwrap();
        dft(&t)
    }

    #[test]
    fn unit_transfer_with_open_filter_is_identity() {
        let y = Trace::new(vec![0.0, 1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let mut one = vec![0.0; 8];
        one[0] = 1.0;
        let cfg = DeconvConfig { filter: None, baseline_window: 0..2, ..Default::default() };
        let x = deconvolve(&y, &spectrum_of(one), None, &cfg).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_round_trip_is_exact() {
        let x = Trace::new((0..32).map(|i| ((i * 7 % 11) as f64).cos()).collect(), 1.0).unwrap();
        let h = spectrum_of((0..32).map(|i| 0.9f64.powi(i)).collect());
        let xs = dft(&x);
        let prod: Vec<Complex64> = xs.bins().iter().zip(h.bins()).map(|(a, b)| a * b).collect();
        let y: Vec<f64> = idft_complex(&prod).iter().map(|c| c.re).collect();
        let cfg = DeconvConfig { filter: None, baseline_window: 0..2, ..Default::default() };
        let back = deconvolve(&Trace::new(y, 1.0).unwrap(), &h, None, &cfg).unwrap();
        for (a, b) in back.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn all_invalid_bins_give_zero_output() {
        let y = Trace::new(vec![1.0; 8], 1.0).unwrap();
        let h = spectrum_of(vec![1.0; 8]);
        let cfg = DeconvConfig { filter: None, baseline_window: 0..2, ..Default::default() };
        let out = deconvolve(&y, &h, Some(&[false; 8]), &cfg).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let y = Trace::zeros(8, 1.0).unwrap();
        let h = spectrum_of(vec![1.0; 9]);
        assert!(matches!(deconvolve(&y, &h, None, &DeconvConfig::default()), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn report_measures_residual() {
        let a = Trace::new(vec![0.0, 1.0, 2.0, 1.0], 1.0).unwrap();
        let r = Trace::new(vec![0.0, 1.0, 2.0, 2.0], 1.0).unwrap();
        let s = recovery_report(&a, &r, 0..2, 2..4).unwrap();
        assert_eq!(s.baseline_rms, 0.0);
        assert!((s.pulse_rms - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.max_abs, 1.0);
    }
}
