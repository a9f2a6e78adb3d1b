//! Gated charge integration.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::PulseConventions;
use crate::error::{Error, Result};
use crate::signal::Trace;

/// Integrated charge of one pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeResult {
    /// Calibrated charge in keVee.
    pub charge_kevee: f64,
    /// Baseline that was subtracted, in volts.
    pub baseline: f64,
    /// Integration gate in samples.
    pub gate: Range<usize>,
}

/// Integrates the baseline-subtracted pulse over `gate` and converts the
/// area to energy with `kevee_per_volt_second`.
pub fn integrate_charge(
    trace: &Trace,
    gate: Range<usize>,
    kevee_per_volt_second: f64,
    conv: &PulseConventions,
) -> Result<ChargeResult> {
    if gate.end > trace.len() || gate.start > gate.end {
        return Err(Error::InvalidInput(format!("gate {gate:?} does not fit a {}-sample record", trace.len())));
    }
    let m = conv.magnitude(trace)?;
    let baseline = conv.baseline_of(trace)?;
    let area = m[gate.clone()].iter().sum::<f64>() * trace.dt();
    Ok(ChargeResult { charge_kevee: area * kevee_per_volt_second, baseline, gate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Polarity;

    fn conv() -> PulseConventions {
        PulseConventions { polarity: Polarity::Negative, baseline: 0..4 }
    }

    #[test]
    fn box_pulse_charge() {
        let mut s = vec![0.1; 20];
        s[8..12].iter_mut().for_each(|v| *v = -0.9);
        let t = Trace::new(s, 2e-9).unwrap();
        let q = integrate_charge(&t, 6..16, 1e11, &conv()).unwrap();
        assert!((q.charge_kevee - 4.0 * 1.0 * 2e-9 * 1e11).abs() < 1e-9);
        assert!((q.baseline - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_gate_and_overflow() {
        let t = Trace::zeros(20, 1.0).unwrap();
        assert_eq!(integrate_charge(&t, 5..5, 1.0, &conv()).unwrap().charge_kevee, 0.0);
        assert!(integrate_charge(&t, 15..25, 1.0, &conv()).is_err());
    }
}
