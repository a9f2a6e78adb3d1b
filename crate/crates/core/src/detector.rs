//! Scintillation pulse shapes and radioactive source models.
//!
//! A pulse is a two-component exponential decay convolved with a Gaussian
//! rise, normalised to unit area and scaled by the deposited energy times a
//! per-detector charge calibration.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::chain::DigitizerSpec;
use crate::error::{Error, Result};
use crate::signal::Trace;

/// RNG stream reserved for event sampling.
pub const EVENT_STREAM: u64 = 1;

/// Sign of the anode signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Current pulses drive the anode negative.
    #[default]
    Negative,
    /// Positive-going pulses.
    Positive,
}

impl Polarity {
    /// `-1` for negative pulses, `+1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }
}

/// Particle type producing a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    /// Electron recoil.
    Gamma,
    /// Proton recoil.
    Neutron,
}

/// Unit-area pulse template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    /// Standard deviation of the Gaussian rise, in seconds.
    pub rise_sigma: f64,
    /// Fast decay constant, in seconds.
    pub tau_fast: f64,
    /// Slow decay constant, in seconds.
    pub tau_slow: f64,
    /// Fraction of the light in the slow component.
    pub slow_fraction: f64,
    /// Signal sign at the anode.
    #[serde(default)]
    pub polarity: Polarity,
}

impl PulseShape {
    /// Electron-recoil template of a liquid organic scintillator.
    pub fn organic_gamma() -> Self {
        Self {
            rise_sigma: 1.5e-9,
            tau_fast: 3.5e-9,
            tau_slow: 130e-9,
            slow_fraction: 0.20,
            polarity: Polarity::Negative,
        }
    }

    /// Proton-recoil template of a liquid organic scintillator.
    pub fn organic_neutron() -> Self {
        Self { slow_fraction: 0.38, ..Self::organic_gamma() }
    }

    /// Single-exponential inorganic crystal template.
    pub fn inorganic_crystal() -> Self {
        Self { rise_sigma: 1.5e-9, tau_fast: 20e-9, tau_slow: 20e-9, slow_fraction: 0.0, polarity: Polarity::Negative }
    }

    /// Checks time constants and the slow fraction.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.tau_fast) && positive(self.tau_slow)) {
            return Err(Error::InvalidConfig("decay constants must be positive".into()));
        }
        if !(self.rise_sigma.is_finite() && self.rise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("rise width must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.slow_fraction) {
            return Err(Error::InvalidConfig(format!("slow fraction {} outside [0, 1]", self.slow_fraction)));
        }
        Ok(())
    }

    /// Unit-area density at time `t` after arrival, for a given slow fraction.
    pub fn density(&self, t: f64, slow_fraction: f64) -> f64 {
        let fast = exp_gauss(t, self.tau_fast, self.rise_sigma);
        let slow = if slow_fraction > 0.0 { exp_gauss(t, self.tau_slow, self.rise_sigma) } else { 0.0 };
        (1.0 - slow_fraction) * fast + slow_fraction * slow
    }
}

/// Exponential decay of unit area convolved with a unit-area Gaussian.
fn exp_gauss(t: f64, tau: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if t >= 0.0 { (-t / tau).exp() / tau } else { 0.0 };
    }
    if t < -12.0 * sigma {
        return 0.0;
    }
    let z = (sigma / tau - t / sigma) * FRAC_1_SQRT_2;
    let envelope = (-t / tau + 0.5 * (sigma / tau).powi(2)).exp() / tau;
    if z < -6.0 {
        // erfc(z) equals 2 to double precision here.
        envelope
    } else {
        0.5 * envelope * libm::erfc(z)
    }
}

/// Pulse templates per particle species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesShapes {
    /// Template for electron recoils.
    pub gamma: PulseShape,
    /// Template for proton recoils.
    pub neutron: PulseShape,
}

impl Default for SpeciesShapes {
    fn default() -> Self {
        Self { gamma: PulseShape::organic_gamma(), neutron: PulseShape::organic_neutron() }
    }
}

impl SpeciesShapes {
    /// Template for `species`.
    pub fn for_species(&self, species: Species) -> &PulseShape {
        match species {
            Species::Gamma => &self.gamma,
            Species::Neutron => &self.neutron,
        }
    }

    /// Validates both templates and requires a shared polarity.
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate()?;
        self.neutron.validate()?;
        if self.gamma.polarity != self.neutron.polarity {
            return Err(Error::InvalidConfig("species templates must share a polarity".into()));
        }
        Ok(())
    }
}

/// Per-detector energy calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Identifier matching a resonator id.
    pub id: u16,
    /// Pulse area per unit energy, in volt-seconds per keVee.
    pub charge_per_kevee: f64,
}

impl DetectorSpec {
    /// Requires a positive calibration.
    pub fn validate(&self) -> Result<()> {
        if !(self.charge_per_kevee.is_finite() && self.charge_per_kevee > 0.0) {
            return Err(Error::InvalidConfig(format!("detector {}: calibration must be positive", self.id)));
        }
        Ok(())
    }
}

/// Ground truth for one energy deposit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    /// Deposited energy in keVee.
    pub energy_kevee: f64,
    /// Pulse arrival time relative to the record start, in seconds.
    pub t_arrival: f64,
    /// Particle type.
    pub species: Species,
    /// Detector that registered the deposit.
    pub detector_id: u16,
    /// Mean photoelectron count; zero disables shape fluctuations.
    pub photoelectrons: f64,
    /// Standard-normal draw setting the realised slow fraction.
    pub shape_deviate: f64,
}

impl EventTruth {
    /// Slow fraction realised for this event given the nominal template
    /// value, with binomial photoelectron partition statistics.
    pub fn realised_slow_fraction(&self, nominal: f64) -> f64 {
        if self.photoelectrons <= 0.0 {
            return nominal;
        }
        let sd = (nominal * (1.0 - nominal) / self.photoelectrons).sqrt();
        (nominal + self.shape_deviate * sd).clamp(0.0, 1.0)
    }
}

/// A synthesized anode pulse.
#[derive(Debug, Clone)]
pub struct SynthPulse {
    /// Sampled pulse in volts.
    pub trace: Trace,
    /// Less than 99 % of the pulse area falls inside the record.
    pub truncated: bool,
}

/// Samples the pulse for `event` on the digitizer's record grid. The area
/// equals `energy * charge_per_kevee` with the template's polarity.
pub fn synth_pulse(
    event: &EventTruth,
    shape: &PulseShape,
    charge_per_kevee: f64,
    digitizer: &DigitizerSpec,
) -> Result<SynthPulse> {
    shape.validate()?;
    if !(event.energy_kevee.is_finite() && event.energy_kevee >= 0.0) {
        return Err(Error::InvalidInput(format!("energy must be non-negative, got {}", event.energy_kevee)));
    }
    let dt = digitizer.dt();
    let area = event.energy_kevee * charge_per_kevee;
    let sf = event.realised_slow_fraction(shape.slow_fraction);
    let scale = shape.polarity.sign() * area;
    let samples: Vec<f64> =
        (0..digitizer.record_len).map(|n| scale * shape.density(n as f64 * dt - event.t_arrival, sf)).collect();
    let inside: f64 = samples.iter().sum::<f64>() * dt * shape.polarity.sign();
    let truncated = area > 0.0 && inside < 0.99 * area;
    Ok(SynthPulse { trace: Trace::new(samples, dt)?, truncated })
}

/// Built-in source models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Photopeak plus Compton continuum of a single gamma line.
    Cs137,
    /// Back-to-back annihilation photons in two detectors.
    Na22Coincidence,
    /// Fission source emitting gammas and neutrons.
    Cf252Mixed,
    /// Fixed energy gammas.
    Mono,
}

/// Energy distribution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Photopeak centre in keVee.
    pub photopeak_kevee: f64,
    /// Gaussian resolution at the photopeak; scales as sqrt(E).
    pub resolution_sigma_kevee: f64,
    /// Probability of a full-energy deposit.
    pub photopeak_fraction: f64,
    /// Probability of a Compton deposit.
    pub compton_fraction: f64,
    /// Upper end of the Compton continuum in keVee.
    pub compton_edge_kevee: f64,
    /// Relative rise of the continuum density from its low end to the edge.
    pub compton_slope: f64,
    /// Lowest energy emitted.
    pub min_energy_kevee: f64,
    /// Highest energy emitted by the fission spectrum.
    pub max_energy_kevee: f64,
    /// Mean of the exponential part of the fission spectrum.
    pub exp_mean_kevee: f64,
    /// Probability that a fission-source event is a neutron.
    pub neutron_fraction: f64,
    /// Energy of mono-energetic events.
    pub mono_energy_kevee: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            photopeak_kevee: 662.0,
            resolution_sigma_kevee: 13.5,
            photopeak_fraction: 0.3,
            compton_fraction: 0.7,
            compton_edge_kevee: 477.0,
            compton_slope: 0.5,
            min_energy_kevee: 40.0,
            max_energy_kevee: 900.0,
            exp_mean_kevee: 200.0,
            neutron_fraction: 0.4,
            mono_energy_kevee: 662.0,
        }
    }
}

/// Timing parameters of coincident emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceParams {
    /// Arrival time of detector 0 minus that of detector 1 before jitter, seconds.
    pub offset_s: f64,
    /// Intrinsic time spread of each detector, seconds.
    pub jitter_sigma_s: f64,
}

impl Default for CoincidenceParams {
    fn default() -> Self {
        Self { offset_s: 1.0e-9, jitter_sigma_s: 0.42e-9 }
    }
}

/// Source description driving event sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Source model.
    pub kind: SourceKind,
    /// Nominal event rate; informational only.
    #[serde(default)]
    pub rate_hint_hz: f64,
    /// Arrival times are uniform over this window after the trigger position.
    pub trigger_window_s: f64,
    /// Photoelectrons per keVee; zero disables shape fluctuations.
    #[serde(default)]
    pub photoelectrons_per_kevee: f64,
    /// Detectors illuminated; events pick one uniformly.
    pub detectors: Vec<u16>,
    /// Energy distribution.
    #[serde(default)]
    pub energy: EnergyParams,
    /// Pair timing for coincidence sources.
    #[serde(default)]
    pub coincidence: CoincidenceParams,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            kind: SourceKind::Cs137,
            rate_hint_hz: 1.0e4,
            trigger_window_s: 10e-9,
            photoelectrons_per_kevee: 0.6,
            detectors: vec![0],
            energy: EnergyParams::default(),
            coincidence: CoincidenceParams::default(),
        }
    }
}

impl SourceSpec {
    /// Checks probabilities, ranges and detector lists.
    pub fn validate(&self) -> Result<()> {
        let e = &self.energy;
        if (e.photopeak_fraction + e.compton_fraction - 1.0).abs() > 1e-9
            || e.photopeak_fraction < 0.0
            || e.compton_fraction < 0.0
        {
            return Err(Error::InvalidConfig("photopeak and Compton fractions must sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&e.neutron_fraction) {
            return Err(Error::InvalidConfig("neutron fraction must lie in [0, 1]".into()));
        }
        if !(e.min_energy_kevee > 0.0
            && e.compton_edge_kevee > e.min_energy_kevee
            && e.max_energy_kevee > e.min_energy_kevee)
        {
            return Err(Error::InvalidConfig("energy bounds are inconsistent".into()));
        }
        if !(e.resolution_sigma_kevee >= 0.0 && e.exp_mean_kevee > 0.0 && e.compton_slope > -1.0) {
            return Err(Error::InvalidConfig("energy shape parameters out of range".into()));
        }
        if !(self.trigger_window_s >= 0.0 && self.photoelectrons_per_kevee >= 0.0) {
            return Err(Error::InvalidConfig("trigger window and light yield must be non-negative".into()));
        }
        if self.coincidence.jitter_sigma_s < 0.0 {
            return Err(Error::InvalidConfig("coincidence jitter must be non-negative".into()));
        }
        let needed = if self.kind == SourceKind::Na22Coincidence { 2 } else { 1 };
        if self.detectors.len() < needed {
            return Err(Error::InvalidConfig(format!("source needs at least {needed} detector(s)")));
        }
        Ok(())
    }
}

/// Samples a continuum density rising linearly by `slope` across `[lo, hi]`.
fn sample_linear<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, slope: f64) -> f64 {
    let u: f64 = rng.random();
    // Inverse of F(x) = (x + slope x^2 / 2) / (1 + slope / 2) on [0, 1].
    let x = if slope.abs() < 1e-12 {
        u
    } else {
        let c = u * (1.0 + 0.5 * slope);
        ((1.0 + 2.0 * slope * c).sqrt() - 1.0) / slope
    };
    lo + x * (hi - lo)
}

fn smear<R: Rng + ?Sized>(rng: &mut R, e: &EnergyParams, energy: f64) -> f64 {
    if e.resolution_sigma_kevee == 0.0 {
        return energy;
    }
    let sigma = e.resolution_sigma_kevee * (energy / e.photopeak_kevee).sqrt();
    energy + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn single_gamma_energy<R: Rng + ?Sized>(rng: &mut R, e: &EnergyParams) -> f64 {
    loop {
        let raw = if rng.random::<f64>() < e.photopeak_fraction {
            e.photopeak_kevee
        } else {
            sample_linear(rng, e.min_energy_kevee, e.compton_edge_kevee, e.compton_slope)
        };
        let energy = smear(rng, e, raw);
        if energy >= e.min_energy_kevee {
            return energy;
        }
    }
}

fn fission_energy<R: Rng + ?Sized>(rng: &mut R, e: &EnergyParams) -> Result<f64> {
    let exp = Exp::new(1.0 / e.exp_mean_kevee).map_err(|err| Error::InvalidConfig(err.to_string()))?;
    loop {
        let energy = e.min_energy_kevee + exp.sample(rng);
        if energy <= e.max_energy_kevee {
            return Ok(energy);
        }
    }
}

/// Samples `n` records of events; a coincidence source yields two events per
/// record and all others yield one. Arrival times are offset by the
/// digitizer's trigger position.
pub fn sample_records(
    src: &SourceSpec,
    digitizer: &DigitizerSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<EventTruth>>> {
    src.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVENT_STREAM);
    let e = &src.energy;
    let trigger = digitizer.trigger_time();
    let jitter =
        Normal::new(0.0, src.coincidence.jitter_sigma_s).map_err(|err| Error::InvalidConfig(err.to_string()))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t_base = trigger + src.trigger_window_s * rng.random::<f64>();
        let event = |rng: &mut ChaCha8Rng, energy: f64, species, detector_id, t_arrival| EventTruth {
            energy_kevee: energy,
            t_arrival,
            species,
            detector_id,
            photoelectrons: energy * src.photoelectrons_per_kevee,
            shape_deviate: if src.photoelectrons_per_kevee > 0.0 {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            },
        };
        let pick = |rng: &mut ChaCha8Rng| src.detectors[rng.random_range(0..src.detectors.len())];
        let record = match src.kind {
            SourceKind::Cs137 => {
                let energy = single_gamma_energy(&mut rng, e);
                let det = pick(&mut rng);
                vec![event(&mut rng, energy, Species::Gamma, det, t_base)]
            }
            SourceKind::Mono => {
                let det = pick(&mut rng);
                vec![event(&mut rng, e.mono_energy_kevee, Species::Gamma, det, t_base)]
            }
            SourceKind::Cf252Mixed => {
                let species = if rng.random::<f64>() < e.neutron_fraction { Species::Neutron } else { Species::Gamma };
                let energy = fission_energy(&mut rng, e)?;
                let det = pick(&mut rng);
                vec![event(&mut rng, energy, species, det, t_base)]
            }
            SourceKind::Na22Coincidence => {
                let e0 = single_gamma_energy(&mut rng, e);
                let e1 = single_gamma_energy(&mut rng, e);
                let t0 = t_base + src.coincidence.offset_s + jitter.sample(&mut rng);
                let t1 = t_base + jitter.sample(&mut rng);
                let a = event(&mut rng, e0, Species::Gamma, src.detectors[0], t0);
                let b = event(&mut rng, e1, Species::Gamma, src.detectors[1], t1);
                vec![a, b]
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Flattened form of [`sample_records`].
pub fn sample_events(src: &SourceSpec, digitizer: &DigitizerSpec, n: usize, seed: u64) -> Result<Vec<EventTruth>> {
    Ok(sample_records(src, digitizer, n, seed)?.into_iter().flatten().collect())
}

/// Peak value of a unit-area template, found on a fine grid.
pub fn template_peak(shape: &PulseShape) -> f64 {
    let step = shape.rise_sigma.max(shape.tau_fast) / 200.0;
    (0..4000).map(|i| shape.density(-4.0 * shape.rise_sigma + i as f64 * step, shape.slow_fraction)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(energy: f64, t: f64) -> EventTruth {
        EventTruth {
            energy_kevee: energy,
            t_arrival: t,
            species: Species::Gamma,
            detector_id: 0,
            photoelectrons: 0.0,
            shape_deviate: 0.0,
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let s = PulseShape::organic_gamma();
        let h = 0.01e-9;
        let area: f64 = (0..400_000).map(|i| s.density(-20e-9 + i as f64 * h, s.slow_fraction)).sum::<f64>() * h;
        assert!((area - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_rise_reduces_to_exponentials() {
        let s = PulseShape { rise_sigma: 0.0, ..PulseShape::organic_gamma() };
        let t: f64 = 10e-9;
        let expect = 0.8 * (-t / 3.5e-9).exp() / 3.5e-9 + 0.2 * (-t / 130e-9).exp() / 130e-9;
        assert!((s.density(t, 0.2) - expect).abs() < 1e-9 * expect);
        assert_eq!(s.density(-1e-12, 0.2), 0.0);
    }

    #[test]
    fn sampled_pulse_area_matches_calibration() {
        let d = DigitizerSpec::default();
        let p = synth_pulse(&event(1.0, 200e-9), &PulseShape::organic_gamma(), 1e-11, &d).unwrap();
        let area = -p.trace.samples().iter().sum::<f64>() * d.dt();
        assert!((area / 1e-11 - 1.0).abs() < 5e-3);
        assert!(!p.truncated);
        assert!(p.trace.samples().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn zero_energy_gives_zero_trace() {
        let d = DigitizerSpec::default();
        let p = synth_pulse(&event(0.0, 200e-9), &PulseShape::organic_gamma(), 1e-11, &d).unwrap();
        assert!(p.trace.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn late_arrival_is_flagged_truncated() {
        let d = DigitizerSpec::default();
        let p = synth_pulse(&event(100.0, 3.95e-6), &PulseShape::organic_gamma(), 1e-11, &d).unwrap();
        assert!(p.truncated);
    }

    #[test]
    fn fraction_mismatch_is_rejected() {
        let mut src = SourceSpec::default();
        src.energy.photopeak_fraction = 0.5;
        assert!(sample_events(&src, &DigitizerSpec::default(), 1, 0).is_err());
    }

    #[test]
    fn coincidence_source_emits_pairs() {
        let src = SourceSpec { kind: SourceKind::Na22Coincidence, detectors: vec![0, 1], ..Default::default() };
        let recs = sample_records(&src, &DigitizerSpec::default(), 10, 3).unwrap();
        assert!(recs.iter().all(|r| r.len() == 2 && r[0].detector_id == 0 && r[1].detector_id == 1));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = DigitizerSpec::default();
        let a = sample_events(&SourceSpec::default(), &d, 50, 9).unwrap();
        let b = sample_events(&SourceSpec::default(), &d, 50, 9).unwrap();
        let c = sample_events(&SourceSpec::default(), &d, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn linear_continuum_sampler_spans_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..20000).map(|_| sample_linear(&mut rng, 10.0, 20.0, 0.5)).collect();
        assert!(xs.iter().all(|&x| (10.0..=20.0).contains(&x)));
        // Mean of density 1 + 0.5 x on [0, 1] is (1/2 + 1/6) / (5/4) = 8/15.
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - (10.0 + 10.0 * 8.0 / 15.0)).abs() < 0.05);
    }
}
