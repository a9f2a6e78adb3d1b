//! Run configuration, presets and provenance hashing.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::psd::{FomConfig, PsdParams};
use crate::analysis::timing::{CfdConfig, Interpolation};
use crate::analysis::PulseConventions;
use crate::chain::{DigitizerSpec, FanInSpec, FanInTopology, ResonatorSpec};
use crate::deconv::DeconvConfig;
use crate::detector::{
    template_peak, CoincidenceParams, DetectorSpec, EnergyParams, PulseShape, SourceKind, SourceSpec, SpeciesShapes,
};
use crate::error::{Error, Result};
use crate::sysid::SysIdConfig;

/// Noise calibration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    /// Record pairs averaged per resonator.
    pub records: usize,
    /// RMS of the white calibration input, in volts.
    pub input_rms_v: f64,
    /// Upper edge of the band checked for whiteness, in hertz.
    pub whiteness_band_hz: f64,
    /// Estimator settings.
    pub sysid: SysIdConfig,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { records: 10_000, input_rms_v: 0.08, whiteness_band_hz: 180e6, sysid: SysIdConfig::default() }
    }
}

/// Pulse analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    /// Leading samples excluded from the baseline window.
    pub baseline_skip: usize,
    /// Samples before the trigger position where the charge gate opens.
    pub charge_gate_lead: usize,
    /// Charge gate length in samples.
    pub charge_gate_len: usize,
    /// CFD weight of the prompt signal.
    pub cfd_fraction: f64,
    /// CFD delay in seconds.
    pub cfd_delay_s: f64,
    /// CFD arming level as the peak of a gamma pulse of this energy, keVee.
    pub cfd_threshold_kevee: f64,
    /// CFD crossing refinement.
    #[serde(default)]
    pub cfd_interpolation: Interpolation,
    /// Pulse-shape gates.
    pub psd: PsdParams,
    /// Smallest short-gate offset scanned.
    pub psd_offset_min: usize,
    /// Largest short-gate offset scanned.
    pub psd_offset_max: usize,
    /// Figure-of-merit histogram settings.
    pub fom: FomConfig,
    /// Photopeak fit window, keVee.
    pub photopeak_window_kevee: (f64, f64),
    /// Photopeak histogram bins.
    pub photopeak_bins: usize,
    /// Energy intervals for timing comparisons, keVee.
    pub timing_bins_kevee: Vec<(f64, f64)>,
    /// Largest accepted coincidence time difference, seconds.
    pub coincidence_window_s: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            baseline_skip: 8,
            charge_gate_lead: 8,
            charge_gate_len: 150,
            cfd_fraction: 1.0,
            cfd_delay_s: 7.2e-9,
            cfd_threshold_kevee: 80.0,
            cfd_interpolation: Interpolation::Linear,
            psd: PsdParams::default(),
            psd_offset_min: 0,
            psd_offset_max: 20,
            fom: FomConfig::default(),
            photopeak_window_kevee: (620.0, 705.0),
            photopeak_bins: 34,
            timing_bins_kevee: vec![
                (80.0, 150.0),
                (150.0, 200.0),
                (200.0, 300.0),
                (300.0, 400.0),
                (400.0, 500.0),
                (500.0, 600.0),
            ],
            coincidence_window_s: 20e-9,
        }
    }
}

impl AnalysisSettings {
    /// Scanned short-gate offsets.
    pub fn psd_offsets(&self) -> RangeInclusive<usize> {
        self.psd_offset_min..=self.psd_offset_max
    }
}

/// Everything needed to reproduce a simulation, calibration and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Base seed; record `i` uses `seed + i`.
    pub seed: u64,
    /// Reject resonators outside the multiplexing design envelope.
    pub enforce_design_bounds: bool,
    /// Digitizer.
    pub digitizer: DigitizerSpec,
    /// Summing amplifier.
    pub fanin: FanInSpec,
    /// Channel routing of the resonators.
    pub topology: FanInTopology,
    /// Resonators, one per detector.
    pub resonators: Vec<ResonatorSpec>,
    /// Detector calibrations.
    pub detectors: Vec<DetectorSpec>,
    /// Pulse templates.
    pub shapes: SpeciesShapes,
    /// Radiation source.
    pub source: SourceSpec,
    /// Noise calibration.
    pub calibration: CalibrationSettings,
    /// Pulse recovery.
    pub deconv: DeconvConfig,
    /// Pulse analysis.
    pub analysis: AnalysisSettings,
}

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 4] = ["cs137-organic", "cs137-crystal", "na22-coincidence", "cf252-psd"];

fn organic_detectors() -> Vec<DetectorSpec> {
    vec![DetectorSpec { id: 0, charge_per_kevee: 0.8e-11 }, DetectorSpec { id: 1, charge_per_kevee: 0.8e-11 }]
}

fn default_resonators() -> Vec<ResonatorSpec> {
    vec![
        ResonatorSpec { id: 0, f0_hz: 7.00e6, q_factor: 12.0, gain: 0.17 },
        ResonatorSpec { id: 1, f0_hz: 15.25e6, q_factor: 12.0, gain: 0.17 },
    ]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            enforce_design_bounds: true,
            digitizer: DigitizerSpec::default(),
            fanin: FanInSpec::default(),
            topology: FanInTopology::Shared,
            resonators: default_resonators(),
            detectors: organic_detectors(),
            shapes: SpeciesShapes::default(),
            source: SourceSpec::default(),
            calibration: CalibrationSettings::default(),
            deconv: DeconvConfig::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

impl RunConfig {
    /// Named configuration for one of the standard measurements.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "cs137-organic" => Ok(base),
            "cs137-crystal" => {
                let crystal = PulseShape::inorganic_crystal();
                let mut cfg = Self {
                    shapes: SpeciesShapes { gamma: crystal.clone(), neutron: crystal },
                    // The fast crystal pulse drives the resonators harder per
                    // keVee; this keeps the fan-in inside the rails to ~800 keVee.
                    detectors: vec![
                        DetectorSpec { id: 0, charge_per_kevee: 1.0e-11 },
                        DetectorSpec { id: 1, charge_per_kevee: 1.0e-11 },
                    ],
                    ..base
                };
                cfg.source.photoelectrons_per_kevee = 0.0;
                cfg.analysis.charge_gate_len = 100;
                Ok(cfg)
            }
            "na22-coincidence" => Ok(Self {
                topology: FanInTopology::PerDetector,
                source: SourceSpec {
                    kind: SourceKind::Na22Coincidence,
                    detectors: vec![0, 1],
                    photoelectrons_per_kevee: 0.0,
                    energy: EnergyParams {
                        photopeak_kevee: 511.0,
                        photopeak_fraction: 0.0,
                        compton_fraction: 1.0,
                        compton_edge_kevee: 341.0,
                        ..EnergyParams::default()
                    },
                    coincidence: CoincidenceParams::default(),
                    ..SourceSpec::default()
                },
                ..base
            }),
            "cf252-psd" => {
                Ok(Self { source: SourceSpec { kind: SourceKind::Cf252Mixed, ..SourceSpec::default() }, ..base })
            }
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    /// Parses TOML and validates the result.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialises to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Cross-checks every section.
    pub fn validate(&self) -> Result<()> {
        let d = &self.digitizer;
        d.validate()?;
        self.fanin.validate()?;
        self.shapes.validate()?;
        self.source.validate()?;
        self.calibration.sysid.validate()?;
        self.deconv.validate()?;
        if self.resonators.is_empty() {
            return Err(Error::InvalidConfig("at least one resonator is required".into()));
        }
        for r in &self.resonators {
            r.validate(d)?;
            if self.enforce_design_bounds {
                r.check_design_bounds()?;
            }
            let det = self.detectors.iter().filter(|x| x.id == r.id).count();
            if det != 1 {
                return Err(Error::InvalidConfig(format!("resonator {} needs exactly one detector entry", r.id)));
            }
        }
        for det in &self.detectors {
            det.validate()?;
        }
        for id in &self.source.detectors {
            if !self.resonators.iter().any(|r| r.id == *id) {
                return Err(Error::InvalidConfig(format!("source illuminates unknown detector {id}")));
            }
        }
        if self.topology == FanInTopology::Shared && self.resonators.len() > self.fanin.n_inputs {
            return Err(Error::InvalidConfig("more resonators than fan-in inputs".into()));
        }
        if self.deconv.baseline_window.end > d.pre_trigger {
            return Err(Error::InvalidConfig("recovery baseline window must end before the trigger".into()));
        }
        if !(self.calibration.records > 0 && self.calibration.input_rms_v > 0.0) {
            return Err(Error::InvalidConfig("calibration needs records and a positive input level".into()));
        }
        let a = &self.analysis;
        self.conventions()?;
        if a.charge_gate_lead > d.pre_trigger || d.pre_trigger - a.charge_gate_lead + a.charge_gate_len > d.record_len {
            return Err(Error::InvalidConfig("charge gate does not fit the record".into()));
        }
        if a.psd_offset_min > a.psd_offset_max || a.psd.start_before_peak + a.psd_offset_max > a.psd.long_len {
            return Err(Error::InvalidConfig("short-gate offsets must fit inside the long gate".into()));
        }
        if a.photopeak_window_kevee.0 >= a.photopeak_window_kevee.1 || a.photopeak_bins < 5 {
            return Err(Error::InvalidConfig("photopeak window is empty".into()));
        }
        Ok(())
    }

    /// Polarity and baseline window for pulse measurements.
    pub fn conventions(&self) -> Result<PulseConventions> {
        PulseConventions::for_pre_trigger(
            self.shapes.gamma.polarity,
            self.digitizer.pre_trigger,
            self.analysis.baseline_skip,
        )
    }

    /// Detector calibration entry for `id`.
    pub fn detector(&self, id: u16) -> Result<&DetectorSpec> {
        self.detectors
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no detector entry for id {id}")))
    }

    /// Energy per unit pulse area for detector `id`, keVee per volt-second.
    pub fn kevee_per_volt_second(&self, id: u16) -> Result<f64> {
        Ok(1.0 / self.detector(id)?.charge_per_kevee)
    }

    /// CFD settings for detector `id`, converting the energy threshold to volts.
    pub fn cfd(&self, id: u16) -> Result<CfdConfig> {
        let a = &self.analysis;
        let threshold_v =
            a.cfd_threshold_kevee * self.detector(id)?.charge_per_kevee * template_peak(&self.shapes.gamma);
        Ok(CfdConfig {
            fraction: a.cfd_fraction,
            delay_s: a.cfd_delay_s,
            threshold_v,
            interpolation: a.cfd_interpolation,
        })
    }

    /// Charge gate in samples.
    pub fn charge_gate(&self) -> std::ops::Range<usize> {
        let start = self.digitizer.pre_trigger - self.analysis.charge_gate_lead;
        start..start + self.analysis.charge_gate_len
    }

    /// SHA-256 of the configuration with the seed cleared, so that seed
    /// overrides do not change provenance.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = Self { seed: 0, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("configuration serialises to JSON");
        let digest = Sha256::digest(&bytes);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// Hex form of [`Self::hash`].
    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn hash_ignores_seed_but_not_physics() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 99, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.fanin.noise_rms_v *= 2.0;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn out_of_envelope_resonator_is_rejected_unless_relaxed() {
        let mut cfg = RunConfig::default();
        cfg.resonators[0].q_factor = 40.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.enforce_design_bounds = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(RunConfig::preset("nope").is_err());
    }
}
