//! Constant-fraction timing and time-difference statistics.
//!
//! The bipolar signal is `b(n) = f m(n) - m(n - D)` where `m` is the
//! baseline-subtracted pulse magnitude and `D` the delay in samples,
//! interpolated linearly for fractional delays. The pick-off is the first
//! positive-to-negative crossing of `b` after the pulse arms the
//! discriminator by exceeding the amplitude threshold.

use serde::{Deserialize, Serialize};

use super::fit::{distribution_stats, DifferenceStats};
use super::PulseConventions;
use crate::error::{Error, Result};
use crate::signal::Trace;

/// Zero-crossing refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Straight line between the samples that bracket the crossing.
    #[default]
    Linear,
    /// Cubic through the four samples around the crossing.
    Cubic,
}

/// Discriminator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfdConfig {
    /// Weight of the prompt signal.
    pub fraction: f64,
    /// Delay of the subtracted copy, in seconds.
    pub delay_s: f64,
    /// Arming amplitude in volts of pulse magnitude.
    pub threshold_v: f64,
    /// Crossing refinement.
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl CfdConfig {
    /// Checks fraction, delay and threshold.
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction.is_finite() && self.fraction > 0.0) {
            return Err(Error::InvalidConfig("CFD fraction must be positive".into()));
        }
        if !(self.delay_s.is_finite() && self.delay_s > 0.0) {
            return Err(Error::InvalidConfig("CFD delay must be positive".into()));
        }
        if !(self.threshold_v.is_finite() && self.threshold_v > 0.0) {
            return Err(Error::InvalidConfig("CFD threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a pick-off attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfdResult {
    /// Pick-off time in seconds on the trace's time axis; meaningful when `valid`.
    pub t_pickoff: f64,
    /// Fraction used.
    pub fraction: f64,
    /// Delay used, in seconds.
    pub delay_s: f64,
    /// A crossing was found on an armed pulse.
    pub valid: bool,
}

impl CfdResult {
    /// Pick-off time when valid.
    pub fn time(&self) -> Option<f64> {
        self.valid.then_some(self.t_pickoff)
    }
}

fn delayed(m: &[f64], n: usize, delay: f64) -> f64 {
    let pos = n as f64 - delay;
    if pos < 0.0 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= m.len() {
        return m[m.len() - 1];
    }
    m[i] * (1.0 - frac) + m[i + 1] * frac
}

/// Root in `[0, 1]` of the cubic through `(-1, y0), (0, y1), (1, y2), (2, y3)`.
fn cubic_root(y: [f64; 4], start: f64) -> Option<f64> {
    let eval = |t: f64| {
        let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        y[0] * l0 + y[1] * l1 + y[2] * l2 + y[3] * l3
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut t = start;
    for _ in 0..60 {
        let v = eval(t);
        if v > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        t = 0.5 * (lo + hi);
        if hi - lo < 1e-13 {
            break;
        }
    }
    (eval(0.0) > 0.0 && eval(1.0) <= 0.0).then_some(t)
}

/// Constant-fraction pick-off on one trace.
pub fn cfd_time(trace: &Trace, cfg: &CfdConfig, conv: &PulseConventions) -> Result<CfdResult> {
    cfg.validate()?;
    let m = conv.magnitude(trace)?;
    let delay = cfg.delay_s / trace.dt();
    let invalid = CfdResult { t_pickoff: f64::NAN, fraction: cfg.fraction, delay_s: cfg.delay_s, valid: false };
    let start = conv.baseline.end;
    let Some(armed) = (start..m.len()).find(|&n| m[n] >= cfg.threshold_v) else {
        return Ok(invalid);
    };
    let b = |n: usize| cfg.fraction * m[n] - delayed(&m, n, delay);
    for n in armed..m.len() - 1 {
        let (b0, b1) = (b(n), b(n + 1));
        if b0 > 0.0 && b1 <= 0.0 {
            let linear = b0 / (b0 - b1);
            let frac = match cfg.interpolation {
                Interpolation::Linear => linear,
                Interpolation::Cubic if n >= 1 && n + 2 < m.len() => {
                    cubic_root([b(n - 1), b0, b1, b(n + 2)], linear).unwrap_or(linear)
                }
                Interpolation::Cubic => linear,
            };
            return Ok(CfdResult { t_pickoff: trace.time_of(n as f64 + frac), valid: true, ..invalid });
        }
    }
    Ok(invalid)
}

/// Time differences of paired pick-offs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    /// `t1 - t2` for each accepted pair, in seconds.
    pub deltas: Vec<f64>,
    /// Pairs dropped because a time was missing or outside the window.
    pub skipped: usize,
    /// Distribution of the accepted differences.
    pub stats: DifferenceStats,
}

/// Pairs `t1[i]` with `t2[i]` and analyses `t1 - t2` for pairs where both
/// times exist and the difference lies within `window_s`.
pub fn coincidence_delta(t1: &[Option<f64>], t2: &[Option<f64>], window_s: f64) -> Result<CoincidenceResult> {
    if t1.len() != t2.len() {
        return Err(Error::LengthMismatch { expected: t1.len(), found: t2.len() });
    }
    let deltas: Vec<f64> = t1
        .iter()
        .zip(t2)
        .filter_map(|(a, b)| Some(a.as_ref()? - b.as_ref()?))
        .filter(|d| d.abs() <= window_s)
        .collect();
    let skipped = t1.len() - deltas.len();
    let stats = distribution_stats(&deltas)?;
    Ok(CoincidenceResult { deltas, skipped, stats })
}

/// Difference statistics of one energy interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBinStats {
    /// Lower edge in keVee.
    pub lo_kevee: f64,
    /// Upper edge in keVee.
    pub hi_kevee: f64,
    /// Distribution of `a - b` for events inside the interval; absent when
    /// the interval holds no pairs.
    pub stats: Option<DifferenceStats>,
}

/// Splits paired values by energy and analyses `a - b` in each interval.
/// Pairs with a missing value are skipped.
pub fn binned_differences(
    a: &[Option<f64>],
    b: &[Option<f64>],
    energies: &[f64],
    bins: &[(f64, f64)],
) -> Result<Vec<EnergyBinStats>> {
    if a.len() != b.len() || a.len() != energies.len() {
        return Err(Error::LengthMismatch { expected: energies.len(), found: a.len().min(b.len()) });
    }
    bins.iter()
        .map(|&(lo, hi)| {
            let d: Vec<f64> = (0..a.len())
                .filter(|&i| energies[i] >= lo && energies[i] < hi)
                .filter_map(|i| Some(a[i]? - b[i]?))
                .collect();
            let stats = if d.is_empty() { None } else { Some(distribution_stats(&d)?) };
            Ok(EnergyBinStats { lo_kevee: lo, hi_kevee: hi, stats })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Polarity;

    fn conv() -> PulseConventions {
        PulseConventions { polarity: Polarity::Negative, baseline: 0..20 }
    }

    fn cfg() -> CfdConfig {
        CfdConfig { fraction: 1.0, delay_s: 7.2e-9, threshold_v: 0.01, interpolation: Interpolation::Linear }
    }

    fn triangle(apex: usize) -> Trace {
        let s = (0..200)
            .map(|n| {
                let d = n as f64 - apex as f64;
                if !(-10.0..=30.0).contains(&d) {
                    0.0
                } else if d <= 0.0 {
                    -(1.0 + d / 10.0)
                } else {
                    -(1.0 - d / 30.0)
                }
            })
            .collect();
        Trace::new(s, 2e-9).unwrap()
    }

    #[test]
    fn crossing_of_a_triangle_matches_hand_solution() {
        // Prompt falls as 1 - d/30 while the copy delayed by 3.6 samples still
        // rises as 1 + (d - 3.6)/10; equal at d = 2.7 samples past the apex.
        let r = cfd_time(&triangle(60), &cfg(), &conv()).unwrap();
        assert!(r.valid);
        assert!((r.t_pickoff / 2e-9 - 62.7).abs() < 1e-9, "{}", r.t_pickoff / 2e-9);
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let a = cfd_time(&triangle(60), &cfg(), &conv()).unwrap().t_pickoff;
        let b = cfd_time(&triangle(70), &cfg(), &conv()).unwrap().t_pickoff;
        assert!((b - a - 20e-9).abs() < 1e-15);
        let c = cfd_time(&triangle(60).scaled(5.0), &cfg(), &conv()).unwrap().t_pickoff;
        assert!((c - a).abs() < 1e-15);
    }

    #[test]
    fn flat_trace_is_invalid() {
        let r = cfd_time(&Trace::zeros(200, 2e-9).unwrap(), &cfg(), &conv()).unwrap();
        assert!(!r.valid && r.time().is_none());
    }

    #[test]
    fn cubic_agrees_with_linear_on_linear_crossings() {
        let c = CfdConfig { interpolation: Interpolation::Cubic, ..cfg() };
        let a = cfd_time(&triangle(60), &cfg(), &conv()).unwrap().t_pickoff;
        let b = cfd_time(&triangle(60), &c, &conv()).unwrap().t_pickoff;
        assert!((a - b).abs() < 0.05 * 2e-9);
    }

    #[test]
    fn identical_pairs_give_zero_difference() {
        let t: Vec<Option<f64>> = (0..50).map(|i| Some(i as f64 * 1e-9)).collect();
        let r = coincidence_delta(&t, &t, 1e-6).unwrap();
        assert_eq!(r.stats.sigma(), 0.0);
        assert_eq!(r.stats.mean, 0.0);
    }
}
