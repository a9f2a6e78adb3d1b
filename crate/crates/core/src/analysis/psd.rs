//! Charge-comparison pulse shape discrimination.
//!
//! Both gates open a fixed number of samples before the pulse maximum. The
//! long gate has a fixed length; the short gate closes `offset` samples after
//! the maximum. The discrimination parameter is the short-to-long charge
//! ratio, and separation is scored by the figure of merit
//! `(mu_gamma - mu_neutron) / (FWHM_gamma + FWHM_neutron)` from a
//! two-Gaussian fit to the ratio histogram.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::fit::{double_gaussian_model, levenberg_marquardt, mean_sd, Histogram};
use super::PulseConventions;
use crate::detector::Species;
use crate::error::{Error, Result};
use crate::signal::Trace;

/// Full width at half maximum per standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Gate geometry and classification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdParams {
    /// Samples before the maximum where both gates open.
    pub start_before_peak: usize,
    /// Long-gate length in samples.
    pub long_len: usize,
    /// Minimum long-gate charge for classification, in keVee.
    pub energy_threshold_kevee: f64,
    /// Ratios at or above this value are classified as gammas.
    pub split_ratio: f64,
}

impl Default for PsdParams {
    fn default() -> Self {
        Self { start_before_peak: 6, long_len: 120, energy_threshold_kevee: 80.0, split_ratio: 0.8 }
    }
}

/// Classification of one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdClass {
    /// Ratio at or above the split.
    Gamma,
    /// Ratio below the split.
    Neutron,
    /// Long-gate charge below the energy threshold.
    BelowThreshold,
}

/// Gate charges and ratio of one pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    /// Short-gate charge in keVee.
    pub q_short: f64,
    /// Long-gate charge in keVee.
    pub q_long: f64,
    /// `q_short / q_long`.
    pub ratio: f64,
    /// Sample index of the pulse maximum.
    pub peak_index: usize,
    /// Classification.
    pub class: PsdClass,
}

/// Long-gate charge and ratios for a range of short-gate offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdScan {
    /// Long-gate charge in keVee.
    pub q_long: f64,
    /// Ratio for each offset in the scanned range.
    pub ratios: Vec<f64>,
}

fn gate_sums(
    trace: &Trace,
    params: &PsdParams,
    kevee_per_volt_second: f64,
    conv: &PulseConventions,
) -> Result<(Vec<f64>, usize)> {
    let m = conv.magnitude(trace)?;
    let search = conv.baseline.end..m.len();
    let peak = search
        .clone()
        .max_by(|&a, &b| m[a].total_cmp(&m[b]))
        .ok_or_else(|| Error::InvalidInput("record has no samples after the baseline".into()))?;
    let start = peak
        .checked_sub(params.start_before_peak)
        .ok_or_else(|| Error::InvalidInput(format!("pulse maximum at {peak} leaves no room before the gate")))?;
    if start + params.long_len > m.len() {
        return Err(Error::InvalidInput(format!("long gate from {start} runs past the record end")));
    }
    let scale = trace.dt() * kevee_per_volt_second;
    let mut cumulative = Vec::with_capacity(params.long_len + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for v in &m[start..start + params.long_len] {
        acc += v * scale;
        cumulative.push(acc);
    }
    Ok((cumulative, peak))
}

/// Ratios for every offset in `offsets` from one peak search.
pub fn psd_scan(
    trace: &Trace,
    offsets: RangeInclusive<usize>,
    params: &PsdParams,
    kevee_per_volt_second: f64,
    conv: &PulseConventions,
) -> Result<PsdScan> {
    let (c, _) = gate_sums(trace, params, kevee_per_volt_second, conv)?;
    let q_long = c[params.long_len];
    let ratios = offsets
        .map(|o| {
            let stop = (params.start_before_peak + o).min(params.long_len);
            c[stop] / q_long
        })
        .collect();
    Ok(PsdScan { q_long, ratios })
}

/// Gate charges, ratio and class for one pulse and short-gate offset.
pub fn psd_param(
    trace: &Trace,
    short_stop_offset: usize,
    params: &PsdParams,
    kevee_per_volt_second: f64,
    conv: &PulseConventions,
) -> Result<PsdResult> {
    let (c, peak_index) = gate_sums(trace, params, kevee_per_volt_second, conv)?;
    let stop = params.start_before_peak + short_stop_offset;
    if stop > params.long_len {
        return Err(Error::InvalidInput(format!("short gate offset {short_stop_offset} exceeds the long gate")));
    }
    let (q_short, q_long) = (c[stop], c[params.long_len]);
    let ratio = q_short / q_long;
    let class = if !(q_long >= params.energy_threshold_kevee) {
        PsdClass::BelowThreshold
    } else if ratio >= params.split_ratio {
        PsdClass::Gamma
    } else {
        PsdClass::Neutron
    };
    Ok(PsdResult { q_short, q_long, ratio, peak_index, class })
}

/// Histogram settings for the figure of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomConfig {
    /// Number of histogram bins.
    pub bins: usize,
    /// Fraction of the sample trimmed from each tail to set the histogram range.
    pub tail_fraction: f64,
    /// Minimum separation of the two initial peaks, in bins.
    pub min_peak_separation: usize,
}

impl Default for FomConfig {
    fn default() -> Self {
        Self { bins: 100, tail_fraction: 0.001, min_peak_separation: 4 }
    }
}

/// One population of the two-Gaussian fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    /// Centroid.
    pub mean: f64,
    /// Standard deviation.
    pub sigma: f64,
    /// Full width at half maximum.
    pub fwhm: f64,
    /// Peak height in entries per bin.
    pub amplitude: f64,
}

/// Figure of merit with the fitted populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomResult {
    /// Separation over summed widths.
    pub fom: f64,
    /// Population with the larger ratio.
    pub gamma: Population,
    /// Population with the smaller ratio.
    pub neutron: Population,
    /// Reduced chi-square of the fit; zero when moments were used.
    pub chi2_per_dof: f64,
    /// Conditions worth reporting.
    pub warnings: Vec<String>,
}

fn population(mean: f64, sigma: f64, amplitude: f64) -> Population {
    Population { mean, sigma, fwhm: FWHM_PER_SIGMA * sigma, amplitude }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Indices of the two initial peaks in a smoothed histogram: the highest
/// local maximum and the highest other prominent local maximum far enough
/// from it.
fn initial_peaks(counts: &[f64], min_sep: usize) -> Option<(usize, usize)> {
    let n = counts.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            counts[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { smooth[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { smooth[i + 1] };
            smooth[i] > 0.0 && smooth[i] >= left && smooth[i] > right
        })
        .collect();
    let first = *maxima.iter().max_by(|&&a, &&b| smooth[a].total_cmp(&smooth[b]))?;
    // A second peak must be separated from the first by a dip that exceeds
    // counting fluctuations of the 3-bin average.
    let prominent = |i: usize| {
        let (a, b) = (i.min(first), i.max(first));
        let dip = smooth[a..=b].iter().cloned().fold(f64::INFINITY, f64::min);
        let lower = smooth[i].min(smooth[first]);
        lower - dip > (3.0 * (lower / 3.0).sqrt()).max(0.1 * lower)
    };
    let second = *maxima
        .iter()
        .filter(|&&i| i.abs_diff(first) >= min_sep && smooth[i] >= 0.02 * smooth[first] && prominent(i))
        .max_by(|&&a, &&b| smooth[a].total_cmp(&smooth[b]))?;
    Some((first.min(second), first.max(second)))
}

/// Two-Gaussian figure of merit of a ratio sample.
pub fn compute_fom(ratios: &[f64], cfg: &FomConfig) -> Result<FomResult> {
    let mut sorted: Vec<f64> = ratios.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 20 {
        return Err(Error::Fit(format!("{} ratios are too few for a figure of merit", sorted.len())));
    }
    sorted.sort_by(f64::total_cmp);
    let mut lo = quantile(&sorted, cfg.tail_fraction);
    let mut hi = quantile(&sorted, 1.0 - cfg.tail_fraction);
    if hi <= lo {
        lo = sorted[0];
        hi = sorted[sorted.len() - 1];
    }
    if hi <= lo {
        return Err(Error::Fit("all ratios are identical; no second population".into()));
    }
    let pad = 0.02 * (hi - lo);
    let hist = Histogram::new(&sorted, lo - pad, hi + pad, cfg.bins)?;
    let w = hist.width();
    let (i1, i2) = initial_peaks(&hist.counts, cfg.min_peak_separation)
        .ok_or_else(|| Error::Fit("ratio histogram shows a single peak".into()))?;
    let x = hist.centers();
    let split = 0.5 * (x[i1] + x[i2]);
    let (low, high): (Vec<f64>, Vec<f64>) = sorted.iter().partition(|&&v| v < split);
    let (m_low, s_low) = mean_sd(&low);
    let (m_high, s_high) = mean_sd(&high);
    let mut warnings = Vec::new();
    if s_low < 0.5 * w || s_high < 0.5 * w {
        warnings.push("population width below histogram resolution; widths floored at one bin".into());
        let sl = s_low.max(w / 12f64.sqrt());
        let sh = s_high.max(w / 12f64.sqrt());
        let neutron = population(m_low, sl, low.len() as f64);
        let gamma = population(m_high, sh, high.len() as f64);
        let fom = (gamma.mean - neutron.mean) / (gamma.fwhm + neutron.fwhm);
        return Ok(FomResult { fom, gamma, neutron, chi2_per_dof: 0.0, warnings });
    }
    let p0 = [
        hist.counts[i1].max(1.0),
        x[i1],
        s_low.min(x[i2] - x[i1]),
        hist.counts[i2].max(1.0),
        x[i2],
        s_high.min(x[i2] - x[i1]),
    ];
    let sd: Vec<f64> = hist.counts.iter().map(|&c| c.max(1.0).sqrt()).collect();
    let fit = levenberg_marquardt(double_gaussian_model, &x, &hist.counts, &sd, &p0)?;
    let p = &fit.params;
    let mut a = population(p[1], p[2].abs(), p[0]);
    let mut b = population(p[4], p[5].abs(), p[3]);
    if a.mean > b.mean {
        std::mem::swap(&mut a, &mut b);
    }
    if a.amplitude <= 0.0 || b.amplitude <= 0.0 {
        return Err(Error::Fit("a fitted population has non-positive amplitude".into()));
    }
    if a.sigma < 0.25 * w || b.sigma < 0.25 * w {
        warnings.push("fitted width below histogram resolution".into());
    }
    let fom = (b.mean - a.mean) / (a.fwhm + b.fwhm);
    let chi2_per_dof = fit.chi2 / fit.dof as f64;
    Ok(FomResult { fom, gamma: b, neutron: a, chi2_per_dof, warnings })
}

/// Figure of merit at one short-gate offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetScore {
    /// Short-gate offset in samples after the maximum.
    pub offset: usize,
    /// Fit result, or the reason it failed.
    pub fom: std::result::Result<FomResult, String>,
    /// Mean ratio of labelled gammas, when labels were supplied.
    pub gamma_mean: Option<f64>,
    /// Mean ratio of labelled neutrons, when labels were supplied.
    pub neutron_mean: Option<f64>,
}

/// Scan of the short-gate offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortGateScan {
    /// Offset with the highest figure of merit.
    pub best_offset: usize,
    /// Highest figure of merit.
    pub best_fom: f64,
    /// Pulses above the energy threshold.
    pub accepted: usize,
    /// Score of every offset.
    pub curve: Vec<OffsetScore>,
}

/// Selects the short-gate offset maximising the figure of merit over pulses
/// whose long-gate charge passes the energy threshold. Labels, when given,
/// only annotate the curve.
pub fn optimize_short_gate(
    scans: &[PsdScan],
    offsets: RangeInclusive<usize>,
    labels: Option<&[Species]>,
    params: &PsdParams,
    fom_cfg: &FomConfig,
) -> Result<ShortGateScan> {
    if let Some(l) = labels {
        if l.len() != scans.len() {
            return Err(Error::LengthMismatch { expected: scans.len(), found: l.len() });
        }
    }
    let keep: Vec<usize> = (0..scans.len()).filter(|&i| scans[i].q_long >= params.energy_threshold_kevee).collect();
    let mut curve = Vec::new();
    for (j, offset) in offsets.enumerate() {
        let ratios: Vec<f64> = keep.iter().map(|&i| scans[i].ratios[j]).collect();
        let label_mean = |s: Species| {
            labels.and_then(|l| {
                let v: Vec<f64> = keep.iter().filter(|&&i| l[i] == s).map(|&i| scans[i].ratios[j]).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
        };
        curve.push(OffsetScore {
            offset,
            fom: compute_fom(&ratios, fom_cfg).map_err(|e| e.to_string()),
            gamma_mean: label_mean(Species::Gamma),
            neutron_mean: label_mean(Species::Neutron),
        });
    }
    let best = curve
        .iter()
        .filter_map(|c| c.fom.as_ref().ok().map(|f| (c.offset, f.fom)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Fit("no short-gate offset produced a figure of merit".into()))?;
    Ok(ShortGateScan { best_offset: best.0, best_fom: best.1, accepted: keep.len(), curve })
}
