//! Analog front end: resonators, the summing fan-in and the digitizer.
//!
//! Each detector anode drives a damped resonator with impulse response
//! `h(n) = g exp(-a n dt) sin(2 pi f0 n dt)`, `a = pi f0 / Q`. The resonator
//! outputs are summed by a fan-in of gain `G`, white Gaussian noise is added
//! at the fan-in output, and every channel is quantized by the digitizer.
//! The anode pass-through channel is ideal apart from quantization.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{synth_pulse, DetectorSpec, EventTruth, SpeciesShapes};
use crate::error::{Error, Result};
use crate::signal::{dft, ConvolutionKernel, Spectrum, Trace};

/// Sampling, resolution and record layout of the digitizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitizerSpec {
    /// Samples per second.
    pub sample_rate_hz: f64,
    /// Converter resolution in bits.
    pub bits: u32,
    /// Peak-to-peak input range in volts, centred on zero.
    pub full_scale_vpp: f64,
    /// Samples per record.
    pub record_len: usize,
    /// Samples recorded before the trigger position.
    pub pre_trigger: usize,
    /// Bypasses quantization and clipping entirely.
    #[serde(default)]
    pub ideal: bool,
}

impl Default for DigitizerSpec {
    fn default() -> Self {
        Self { sample_rate_hz: 500e6, bits: 14, full_scale_vpp: 2.0, record_len: 2000, pre_trigger: 100, ideal: false }
    }
}

impl DigitizerSpec {
    /// Sample interval in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Nyquist frequency in hertz.
    pub fn nyquist_hz(&self) -> f64 {
        0.5 * self.sample_rate_hz
    }

    /// Volts per code.
    pub fn lsb(&self) -> f64 {
        self.full_scale_vpp / (1u64 << self.bits) as f64
    }

    /// Most negative code.
    pub fn min_code(&self) -> i32 {
        -(1i32 << (self.bits - 1))
    }

    /// Most positive code.
    pub fn max_code(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    /// Time of the trigger position within a record.
    pub fn trigger_time(&self) -> f64 {
        self.pre_trigger as f64 * self.dt()
    }

    /// Checks ranges and record layout.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if !(8..=24).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("digitizer bits must be in 8..=24, got {}", self.bits)));
        }
        if !(self.full_scale_vpp.is_finite() && self.full_scale_vpp > 0.0) {
            return Err(Error::InvalidConfig("full scale must be positive".into()));
        }
        if self.record_len < 16 {
            return Err(Error::InvalidConfig("record length must be at least 16 samples".into()));
        }
        if self.pre_trigger < 24 || self.pre_trigger >= self.record_len {
            return Err(Error::InvalidConfig(format!(
                "pre-trigger must lie in 24..{}, got {}",
                self.record_len, self.pre_trigger
            )));
        }
        Ok(())
    }
}

/// One damped resonator in the multiplexing network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSpec {
    /// Detector identifier this resonator is wired to.
    pub id: u16,
    /// Resonant frequency in hertz.
    pub f0_hz: f64,
    /// Quality factor.
    pub q_factor: f64,
    /// Peak amplitude scale of the impulse response.
    pub gain: f64,
}

impl ResonatorSpec {
    /// Exponential decay rate `pi f0 / Q` in 1/s.
    pub fn decay_rate(&self) -> f64 {
        PI * self.f0_hz / self.q_factor
    }

    /// Time for the envelope to fall by `1/e`.
    pub fn decay_time(&self) -> f64 {
        1.0 / self.decay_rate()
    }

    /// Resonance width `f0 / Q` in hertz.
    pub fn bandwidth_hz(&self) -> f64 {
        self.f0_hz / self.q_factor
    }

    /// Physical consistency against a digitizer: positive parameters and a
    /// resonance below Nyquist.
    pub fn validate(&self, digitizer: &DigitizerSpec) -> Result<()> {
        if !(self.f0_hz.is_finite() && self.f0_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("resonator {}: f0 must be positive", self.id)));
        }
        if self.f0_hz >= digitizer.nyquist_hz() {
            return Err(Error::InvalidConfig(format!(
                "resonator {}: f0 {} Hz is not below Nyquist {} Hz",
                self.id,
                self.f0_hz,
                digitizer.nyquist_hz()
            )));
        }
        if !(self.q_factor.is_finite() && self.q_factor > 0.0) {
            return Err(Error::InvalidConfig(format!("resonator {}: Q must be positive", self.id)));
        }
        if !(self.gain.is_finite() && self.gain != 0.0) {
            return Err(Error::InvalidConfig(format!("resonator {}: gain must be finite and non-zero", self.id)));
        }
        Ok(())
    }

    /// Design envelope for the multiplexing network: Q in 10..=15, decay
    /// faster than 2.5 us and width below 2 MHz.
    pub fn check_design_bounds(&self) -> Result<()> {
        if !(10.0..=15.0).contains(&self.q_factor) {
            return Err(Error::InvalidConfig(format!("resonator {}: Q {} outside 10..=15", self.id, self.q_factor)));
        }
        if self.decay_time() >= 2.5e-6 {
            return Err(Error::InvalidConfig(format!("resonator {}: decay time exceeds 2.5 us", self.id)));
        }
        if self.bandwidth_hz() >= 2e6 {
            return Err(Error::InvalidConfig(format!("resonator {}: bandwidth exceeds 2 MHz", self.id)));
        }
        Ok(())
    }
}

/// Summing amplifier shared by the resonators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanInSpec {
    /// Voltage gain.
    pub gain: f64,
    /// Number of inputs available.
    pub n_inputs: usize,
    /// RMS of white Gaussian noise added at the output, in volts.
    pub noise_rms_v: f64,
}

impl Default for FanInSpec {
    fn default() -> Self {
        Self { gain: 2.0, n_inputs: 4, noise_rms_v: 2.0 * DigitizerSpec::default().lsb() }
    }
}

impl FanInSpec {
    /// Checks gain, input count and noise level.
    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::InvalidConfig("fan-in gain must be positive".into()));
        }
        if self.n_inputs == 0 {
            return Err(Error::InvalidConfig("fan-in needs at least one input".into()));
        }
        if !(self.noise_rms_v.is_finite() && self.noise_rms_v >= 0.0) {
            return Err(Error::InvalidConfig("fan-in noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// How resonator outputs are routed to digitizer channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanInTopology {
    /// All resonators summed into one channel.
    #[default]
    Shared,
    /// One fan-in channel per resonator, each with independent noise.
    PerDetector,
}

/// Sampled resonator impulse response over one record, excluding fan-in gain.
pub fn resonator_impulse_response(resonator: &ResonatorSpec, digitizer: &DigitizerSpec) -> Result<Trace> {
    resonator.validate(digitizer)?;
    let dt = digitizer.dt();
    let a = resonator.decay_rate();
    let w = 2.0 * PI * resonator.f0_hz;
    let samples = (0..digitizer.record_len)
        .map(|n| {
            let t = n as f64 * dt;
            resonator.gain * (-a * t).exp() * (w * t).sin()
        })
        .collect();
    Trace::new(samples, dt)
}

/// Impulse response from anode to fan-in output: resonator times fan-in gain.
pub fn chain_impulse_response(
    resonator: &ResonatorSpec,
    fanin: &FanInSpec,
    digitizer: &DigitizerSpec,
) -> Result<Trace> {
    Ok(resonator_impulse_response(resonator, digitizer)?.scaled(fanin.gain))
}

/// Analytic transfer function of the chain on the record's DFT grid.
pub fn analytic_transfer(resonator: &ResonatorSpec, fanin: &FanInSpec, digitizer: &DigitizerSpec) -> Result<Spectrum> {
    Ok(dft(&chain_impulse_response(resonator, fanin, digitizer)?))
}

/// Adds white Gaussian noise of standard deviation `rms` in place.
pub fn add_white_noise<R: Rng + ?Sized>(trace: &mut Trace, rms: f64, rng: &mut R) -> Result<()> {
    if rms == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, rms).map_err(|e| Error::InvalidInput(e.to_string()))?;
    trace.samples_mut().iter_mut().for_each(|v| *v += normal.sample(rng));
    Ok(())
}

/// Fan-in output for a single resonator driven by `anode`. Noise is added
/// only when `rng` is supplied.
pub fn front_end<R: Rng + ?Sized>(
    anode: &Trace,
    resonator: &ResonatorSpec,
    fanin: &FanInSpec,
    rng: Option<&mut R>,
) -> Result<Trace> {
    let digitizer = DigitizerSpec { sample_rate_hz: 1.0 / anode.dt(), record_len: anode.len(), ..Default::default() };
    let h = resonator_impulse_response(resonator, &digitizer)?;
    let mut y = ConvolutionKernel::new(&h).apply(anode)?.scaled(fanin.gain);
    if let Some(rng) = rng {
        add_white_noise(&mut y, fanin.noise_rms_v, rng)?;
    }
    Ok(y)
}

/// A quantized channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Digitized {
    /// Sample values in volts after quantization.
    pub trace: Trace,
    /// Integer codes; absent for an ideal digitizer.
    pub codes: Option<Vec<i32>>,
    /// Samples that hit either rail.
    pub clipped: usize,
}

/// Quantizes to the nearest code and clips to the converter range.
pub fn digitize(trace: &Trace, digitizer: &DigitizerSpec) -> Result<Digitized> {
    if digitizer.ideal {
        return Ok(Digitized { trace: trace.clone(), codes: None, clipped: 0 });
    }
    let lsb = digitizer.lsb();
    let (lo, hi) = (digitizer.min_code(), digitizer.max_code());
    let mut clipped = 0;
    let codes: Vec<i32> = trace
        .samples()
        .iter()
        .map(|&v| {
            let c = (v / lsb).round();
            if c < lo as f64 {
                clipped += 1;
                lo
            } else if c > hi as f64 {
                clipped += 1;
                hi
            } else {
                c as i32
            }
        })
        .collect();
    let volts = codes.iter().map(|&c| c as f64 * lsb).collect();
    Ok(Digitized { trace: Trace::with_start(volts, trace.dt(), trace.t0())?, codes: Some(codes), clipped })
}

/// Precomputed analog chain for repeated record simulation.
#[derive(Debug, Clone)]
pub struct AnalogChain {
    digitizer: DigitizerSpec,
    fanin: FanInSpec,
    resonators: Vec<ResonatorSpec>,
    kernels: Vec<ConvolutionKernel>,
    topology: FanInTopology,
}

impl AnalogChain {
    /// Validates the components and caches each resonator's response.
    pub fn new(
        digitizer: DigitizerSpec,
        fanin: FanInSpec,
        resonators: Vec<ResonatorSpec>,
        topology: FanInTopology,
    ) -> Result<Self> {
        digitizer.validate()?;
        fanin.validate()?;
        if resonators.is_empty() {
            return Err(Error::InvalidConfig("at least one resonator is required".into()));
        }
        if topology == FanInTopology::Shared && resonators.len() > fanin.n_inputs {
            return Err(Error::InvalidConfig(format!(
                "{} resonators exceed the {} fan-in inputs",
                resonators.len(),
                fanin.n_inputs
            )));
        }
        for (i, r) in resonators.iter().enumerate() {
            if resonators[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::InvalidConfig(format!("duplicate resonator id {}", r.id)));
            }
        }
        let kernels = resonators
            .iter()
            .map(|r| resonator_impulse_response(r, &digitizer).map(|h| ConvolutionKernel::new(&h)))
            .collect::<Result<_>>()?;
        Ok(Self { digitizer, fanin, resonators, kernels, topology })
    }

    /// Digitizer settings.
    pub fn digitizer(&self) -> &DigitizerSpec {
        &self.digitizer
    }

    /// Fan-in settings.
    pub fn fanin(&self) -> &FanInSpec {
        &self.fanin
    }

    /// Resonators in channel order.
    pub fn resonators(&self) -> &[ResonatorSpec] {
        &self.resonators
    }

    /// Channel routing.
    pub fn topology(&self) -> FanInTopology {
        self.topology
    }

    /// Position of the resonator wired to detector `id`.
    pub fn index_of(&self, id: u16) -> Option<usize> {
        self.resonators.iter().position(|r| r.id == id)
    }

    /// Noise-free fan-in contribution of one anode signal through resonator `index`.
    pub fn respond(&self, index: usize, anode: &Trace) -> Result<Trace> {
        Ok(self.kernels[index].apply(anode)?.scaled(self.fanin.gain))
    }
}

/// One simulated digitizer record with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedRecord {
    /// Anode pass-through channels, aligned with the chain's resonators.
    pub anodes: Vec<Digitized>,
    /// Fan-in channels: one for a shared topology, else one per resonator.
    pub fanins: Vec<Digitized>,
    /// Events deposited in this record.
    pub truth: Vec<EventTruth>,
    /// More than one detector fired in this record.
    pub multi_detector: bool,
    /// At least one pulse extends past the record end.
    pub truncated: bool,
}

impl SimulatedRecord {
    /// Total clipped samples across all channels.
    pub fn clipped(&self) -> usize {
        self.anodes.iter().chain(&self.fanins).map(|d| d.clipped).sum()
    }
}

/// Synthesizes anode pulses for `events`, passes them through the chain,
/// adds fan-in noise and digitizes every channel.
pub fn simulate_record<R: Rng + ?Sized>(
    events: &[EventTruth],
    shapes: &SpeciesShapes,
    detectors: &[DetectorSpec],
    chain: &AnalogChain,
    rng: &mut R,
) -> Result<SimulatedRecord> {
    let d = chain.digitizer();
    let dt = d.dt();
    let mut analog: Vec<Trace> = vec![Trace::zeros(d.record_len, dt)?; chain.resonators().len()];
    let mut truncated = false;
    for ev in events {
        let idx = chain
            .index_of(ev.detector_id)
            .ok_or_else(|| Error::InvalidInput(format!("no resonator for detector {}", ev.detector_id)))?;
        let det = detectors
            .iter()
            .find(|s| s.id == ev.detector_id)
            .ok_or_else(|| Error::InvalidInput(format!("no detector entry for id {}", ev.detector_id)))?;
        let pulse = synth_pulse(ev, shapes.for_species(ev.species), det.charge_per_kevee, d)?;
        truncated |= pulse.truncated;
        analog[idx] = analog[idx].add(&pulse.trace)?;
    }
    let fired = analog.iter().filter(|t| t.samples().iter().any(|&v| v != 0.0)).count();
    let mut fanins = Vec::new();
    match chain.topology() {
        FanInTopology::Shared => {
            let mut sum = Trace::zeros(d.record_len, dt)?;
            for (i, a) in analog.iter().enumerate() {
                sum = sum.add(&chain.respond(i, a)?)?;
            }
            add_white_noise(&mut sum, chain.fanin().noise_rms_v, rng)?;
            fanins.push(digitize(&sum, d)?);
        }
        FanInTopology::PerDetector => {
            for (i, a) in analog.iter().enumerate() {
                let mut y = chain.respond(i, a)?;
                add_white_noise(&mut y, chain.fanin().noise_rms_v, rng)?;
                fanins.push(digitize(&y, d)?);
            }
        }
    }
    let anodes = analog.iter().map(|a| digitize(a, d)).collect::<Result<_>>()?;
    Ok(SimulatedRecord { anodes, fanins, truth: events.to_vec(), multi_detector: fired > 1, truncated })
}

/// Identifies which resonator dominates a fan-in record from its strongest
/// non-DC spectral line. Returns the detector id.
pub fn classify_detector(fanin: &Trace, resonators: &[ResonatorSpec]) -> Option<u16> {
    let spectrum = dft(fanin);
    let half = spectrum.len() / 2;
    let (best, mag) = (1..=half).map(|k| (k, spectrum.bins()[k].norm())).max_by(|a, b| a.1.total_cmp(&b.1))?;
    if mag == 0.0 {
        return None;
    }
    let f = spectrum.frequency(best).abs();
    resonators.iter().min_by(|a, b| (a.f0_hz - f).abs().total_cmp(&(b.f0_hz - f).abs())).map(|r| r.id)
}
