//! Pulse-level observables and the statistics built on them.

pub mod charge;
pub mod fit;
pub mod psd;
pub mod timing;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::detector::Polarity;
use crate::error::{Error, Result};
use crate::signal::Trace;

/// Polarity and baseline window shared by every pulse measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseConventions {
    /// Sign of the pulses.
    pub polarity: Polarity,
    /// Samples averaged for the baseline.
    pub baseline: Range<usize>,
}

impl PulseConventions {
    /// Window `[skip, pre_trigger - 8)`; the first `skip` samples are excluded
    /// because circular recovery leaves an edge transient there.
    pub fn for_pre_trigger(polarity: Polarity, pre_trigger: usize, skip: usize) -> Result<Self> {
        let end = pre_trigger.saturating_sub(8);
        if skip >= end {
            return Err(Error::InvalidConfig(format!("baseline window {skip}..{end} is empty")));
        }
        Ok(Self { polarity, baseline: skip..end })
    }

    /// Mean over the baseline window.
    pub fn baseline_of(&self, trace: &Trace) -> Result<f64> {
        let w = self.baseline.clone();
        if w.is_empty() || w.end > trace.len() {
            return Err(Error::InvalidInput(format!(
                "baseline window {w:?} does not fit a {}-sample record",
                trace.len()
            )));
        }
        Ok(trace.samples()[w.clone()].iter().sum::<f64>() / w.len() as f64)
    }

    /// Baseline-subtracted samples oriented so that pulses are positive.
    pub fn magnitude(&self, trace: &Trace) -> Result<Vec<f64>> {
        let b = self.baseline_of(trace)?;
        let s = self.polarity.sign();
        Ok(trace.samples().iter().map(|v| s * (v - b)).collect())
    }
}
