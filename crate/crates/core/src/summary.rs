//! Aggregate comparisons of anode and recovered observables over a run.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::analysis::fit::{difference_stats, fit_photopeak, DifferenceStats, GaussianFit};
use crate::analysis::psd::{optimize_short_gate, FomConfig, PsdParams, PsdScan, ShortGateScan};
use crate::analysis::timing::{binned_differences, coincidence_delta, EnergyBinStats};
use crate::config::RunConfig;
use crate::detector::Species;
use crate::error::{Error, Result};
use crate::pipeline::EventRow;

/// Anode minus recovered charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSummary {
    /// Pulses compared.
    pub pulses: usize,
    /// Distribution of `anode - recovered` in keVee.
    pub difference: DifferenceStats,
}

/// Compares gated charges of every row.
pub fn charge_summary(rows: &[EventRow]) -> Result<ChargeSummary> {
    let a: Vec<f64> = rows.iter().map(|r| r.anode.charge_kevee).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.recovered.charge_kevee).collect();
    Ok(ChargeSummary { pulses: rows.len(), difference: difference_stats(&a, &b)? })
}

/// Photopeak fits of the anode and recovered energy spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    /// Pulses in each spectrum.
    pub pulses: usize,
    /// Fit window in keVee.
    pub window_kevee: (f64, f64),
    /// Anode pulses inside the window.
    pub anode_in_window: usize,
    /// Recovered pulses inside the window.
    pub recovered_in_window: usize,
    /// Anode photopeak fit.
    pub anode: GaussianFit,
    /// Recovered photopeak fit.
    pub recovered: GaussianFit,
    /// `sigma_recovered / sigma_anode - 1`.
    pub relative_broadening: f64,
}

/// Fits the photopeak of both spectra inside `window`.
pub fn spectrum_summary(rows: &[EventRow], window: (f64, f64), bins: usize) -> Result<SpectrumSummary> {
    let a: Vec<f64> = rows.iter().map(|r| r.anode.charge_kevee).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.recovered.charge_kevee).collect();
    let inside = |v: &[f64]| v.iter().filter(|&&e| e >= window.0 && e < window.1).count();
    let anode = fit_photopeak(&a, window.0, window.1, bins)?;
    let recovered = fit_photopeak(&b, window.0, window.1, bins)?;
    Ok(SpectrumSummary {
        pulses: rows.len(),
        window_kevee: window,
        anode_in_window: inside(&a),
        recovered_in_window: inside(&b),
        relative_broadening: recovered.sigma / anode.sigma - 1.0,
        anode,
        recovered,
    })
}

/// Anode minus recovered CFD time per energy interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    /// Statistics per interval of anode charge, in seconds.
    pub bins: Vec<EnergyBinStats>,
    /// Every interval is populated and widths fall strictly from each to the next.
    pub strictly_decreasing: bool,
}

/// Bins the CFD time differences by anode charge.
pub fn timing_summary(rows: &[EventRow], bins: &[(f64, f64)]) -> Result<TimingSummary> {
    let a: Vec<Option<f64>> = rows.iter().map(|r| r.anode.time_s).collect();
    let b: Vec<Option<f64>> = rows.iter().map(|r| r.recovered.time_s).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.anode.charge_kevee).collect();
    let bins = binned_differences(&a, &b, &e, bins)?;
    let widths: Option<Vec<f64>> = bins.iter().map(|b| b.stats.as_ref().map(DifferenceStats::sigma)).collect();
    let strictly_decreasing = widths.is_some_and(|w| w.windows(2).all(|p| p[1] < p[0]));
    Ok(TimingSummary { bins, strictly_decreasing })
}

/// Time differences between two detectors in the same records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSummary {
    /// First detector id.
    pub first: u16,
    /// Second detector id.
    pub second: u16,
    /// Records with both detectors measured.
    pub pairs: usize,
    /// Anode `t_first - t_second` in seconds.
    pub anode: DifferenceStats,
    /// Recovered `t_first - t_second` in seconds.
    pub recovered: DifferenceStats,
    /// Pairs dropped from the anode distribution.
    pub anode_skipped: usize,
    /// Pairs dropped from the recovered distribution.
    pub recovered_skipped: usize,
}

/// Pairs rows of detectors `first` and `second` by record.
pub fn coincidence_summary(rows: &[EventRow], first: u16, second: u16, window_s: f64) -> Result<CoincidenceSummary> {
    let mut pairs = Vec::new();
    for r in rows.iter().filter(|r| r.detector_id == first) {
        if let Some(s) = rows.iter().find(|s| s.record == r.record && s.detector_id == second) {
            pairs.push((r, s));
        }
    }
    let take = |f: fn(&EventRow) -> Option<f64>| -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        pairs.iter().map(|(r, s)| (f(r), f(s))).unzip()
    };
    let (a1, a2) = take(|r| r.anode.time_s);
    let (r1, r2) = take(|r| r.recovered.time_s);
    let anode = coincidence_delta(&a1, &a2, window_s)?;
    let recovered = coincidence_delta(&r1, &r2, window_s)?;
    Ok(CoincidenceSummary {
        first,
        second,
        pairs: pairs.len(),
        anode: anode.stats,
        recovered: recovered.stats,
        anode_skipped: anode.skipped,
        recovered_skipped: recovered.skipped,
    })
}

/// Short-gate optimisation of anode and recovered pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSummary {
    /// Anode scan.
    pub anode: ShortGateScan,
    /// Recovered scan.
    pub recovered: ShortGateScan,
    /// `1 - FOM_recovered / FOM_anode`.
    pub relative_degradation: f64,
}

/// Optimises the short gate separately on both pulse sets.
pub fn psd_summary(
    rows: &[EventRow],
    offsets: RangeInclusive<usize>,
    params: &PsdParams,
    fom_cfg: &FomConfig,
) -> Result<PsdSummary> {
    let collect = |f: fn(&EventRow) -> Option<&PsdScan>| {
        let mut scans = Vec::new();
        let mut labels = Vec::new();
        for r in rows {
            if let Some(s) = f(r) {
                scans.push(s.clone());
                labels.push(r.species);
            }
        }
        let labels: Option<Vec<Species>> = labels.into_iter().collect();
        (scans, labels)
    };
    let (sa, la) = collect(|r| r.anode.psd.as_ref());
    let (sr, lr) = collect(|r| r.recovered.psd.as_ref());
    if sa.is_empty() || sr.is_empty() {
        return Err(Error::Fit("no pulses suitable for pulse-shape analysis".into()));
    }
    let anode = optimize_short_gate(&sa, offsets.clone(), la.as_deref(), params, fom_cfg)?;
    let recovered = optimize_short_gate(&sr, offsets, lr.as_deref(), params, fom_cfg)?;
    Ok(PsdSummary { relative_degradation: 1.0 - recovered.best_fom / anode.best_fom, anode, recovered })
}

/// Analyses selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    /// Charge differences.
    Charge,
    /// Photopeak fits.
    Spectrum,
    /// Binned CFD differences.
    Timing,
    /// Two-detector time differences.
    Coincidence,
    /// Short-gate optimisation.
    Psd,
}

impl Analysis {
    /// Every analysis in report order.
    pub const ALL: [Analysis; 5] = [Self::Charge, Self::Spectrum, Self::Timing, Self::Coincidence, Self::Psd];

    /// Name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Self::Charge => "charge",
            Self::Spectrum => "spectrum",
            Self::Timing => "timing",
            Self::Coincidence => "coincidence",
            Self::Psd => "psd",
        }
    }

    /// Runs this analysis and returns its summary as JSON.
    pub fn run(self, rows: &[EventRow], cfg: &RunConfig) -> Result<serde_json::Value> {
        let a = &cfg.analysis;
        match self {
            Self::Charge => json(charge_summary(rows)),
            Self::Spectrum => json(spectrum_summary(rows, a.photopeak_window_kevee, a.photopeak_bins)),
            Self::Timing => json(timing_summary(rows, &a.timing_bins_kevee)),
            Self::Coincidence => {
                let (first, second) = match cfg.resonators.as_slice() {
                    [r0, r1, ..] => (r0.id, r1.id),
                    _ => return Err(Error::InvalidConfig("coincidence analysis needs two detectors".into())),
                };
                json(coincidence_summary(rows, first, second, a.coincidence_window_s))
            }
            Self::Psd => json(psd_summary(rows, a.psd_offsets(), &a.psd, &a.fom)),
        }
    }
}

fn json<T: Serialize>(v: Result<T>) -> Result<serde_json::Value> {
    v.and_then(|s| serde_json::to_value(s).map_err(|e| Error::Format(e.to_string())))
}

impl std::str::FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown analysis {s:?}")))
    }
}
