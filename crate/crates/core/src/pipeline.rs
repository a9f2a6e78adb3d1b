//! End-to-end orchestration: simulation, calibration, recovery and
//! per-event measurement, shared by the command-line tool and the tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::charge::integrate_charge;
use crate::analysis::psd::PsdScan;
use crate::analysis::timing::cfd_time;
use crate::analysis::PulseConventions;
use crate::chain::{add_white_noise, analytic_transfer, classify_detector, digitize, simulate_record, AnalogChain};
use crate::chain::{FanInTopology, SimulatedRecord};
use crate::config::RunConfig;
use crate::deconv::deconvolve;
use crate::detector::{sample_records, EventTruth, Species};
use crate::error::{Error, Result};
use crate::signal::{Spectrum, Trace};
use crate::sysid::{CorrelationAccumulator, ImpulseEstimate};

/// RNG stream for fan-in noise of physics records.
pub const NOISE_STREAM: u64 = 2;
/// RNG stream for calibration records.
pub const CALIBRATION_STREAM: u64 = 3;

/// Generator for record `index` of a run seeded with `seed` on `stream`.
pub fn record_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    rng.set_stream(stream);
    rng
}

/// Transfer function used to recover one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryChannel {
    /// Detector id.
    pub detector_id: u16,
    /// Transfer function on the record grid.
    pub transfer: Spectrum,
    /// Optional validity mask from calibration.
    pub valid: Option<Vec<bool>>,
}

impl RecoveryChannel {
    /// Wraps a calibration estimate.
    pub fn from_estimate(detector_id: u16, est: ImpulseEstimate) -> Self {
        Self { detector_id, transfer: est.transfer, valid: Some(est.valid) }
    }
}

/// Per-record traces entering the measurement stage.
#[derive(Debug, Clone)]
pub struct RecordTraces {
    /// Record index.
    pub index: u64,
    /// Anode pass-through per resonator, in configuration order.
    pub anodes: Vec<Trace>,
    /// Recovered pulse per resonator, absent where no recovery was attempted.
    pub recovered: Vec<Option<Trace>>,
    /// Simulation truth when known.
    pub truth: Option<Vec<EventTruth>>,
}

/// Observables of one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseMeasurement {
    /// Gated charge in keVee.
    pub charge_kevee: f64,
    /// CFD pick-off time in seconds.
    pub time_s: Option<f64>,
    /// Pulse-shape ratios over the configured offsets.
    pub psd: Option<PsdScan>,
}

/// Anode and recovered observables of one detector in one record.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    /// Record index.
    pub record: u64,
    /// Detector id.
    pub detector_id: u16,
    /// True energy when known.
    pub true_energy_kevee: Option<f64>,
    /// True species when known.
    pub species: Option<Species>,
    /// Measurement of the anode pass-through.
    pub anode: PulseMeasurement,
    /// Measurement of the recovered pulse.
    pub recovered: PulseMeasurement,
}

/// Configured chain with helpers for every processing stage.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: RunConfig,
    chain: AnalogChain,
    conv: PulseConventions,
}

impl Pipeline {
    /// Validates the configuration and prepares the analog chain.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let chain = AnalogChain::new(cfg.digitizer.clone(), cfg.fanin.clone(), cfg.resonators.clone(), cfg.topology)?;
        let conv = cfg.conventions()?;
        Ok(Self { cfg, chain, conv })
    }

    /// Configuration in use.
    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Analog chain in use.
    pub fn chain(&self) -> &AnalogChain {
        &self.chain
    }

    /// Pulse conventions in use.
    pub fn conventions(&self) -> &PulseConventions {
        &self.conv
    }

    /// Position of detector `id` among the resonators.
    pub fn index_of(&self, id: u16) -> Result<usize> {
        self.chain.index_of(id).ok_or_else(|| Error::InvalidInput(format!("unknown detector {id}")))
    }

    /// Simulates record `index` holding `events`.
    pub fn simulate_one(&self, index: u64, events: &[EventTruth], seed: u64) -> Result<SimulatedRecord> {
        let mut rng = record_rng(seed, index, NOISE_STREAM);
        simulate_record(events, &self.cfg.shapes, &self.cfg.detectors, &self.chain, &mut rng)
    }

    /// Lazily simulates `n` records of the configured source.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<impl Iterator<Item = Result<SimulatedRecord>> + '_> {
        let events = sample_records(&self.cfg.source, &self.cfg.digitizer, n, seed)?;
        Ok(events.into_iter().enumerate().map(move |(i, ev)| self.simulate_one(i as u64, &ev, seed)))
    }

    /// Calibration record `index` for detector `id`: digitized white input
    /// and the digitized noisy fan-in response.
    pub fn calibration_pair(&self, id: u16, index: u64, seed: u64) -> Result<(Trace, Trace)> {
        let i = self.index_of(id)?;
        let d = self.chain.digitizer();
        let mut rng = record_rng(seed, index, CALIBRATION_STREAM);
        let mut x = Trace::zeros(d.record_len, d.dt())?;
        add_white_noise(&mut x, self.cfg.calibration.input_rms_v, &mut rng)?;
        let mut y = self.chain.respond(i, &x)?;
        add_white_noise(&mut y, self.cfg.fanin.noise_rms_v, &mut rng)?;
        Ok((digitize(&x, d)?.trace, digitize(&y, d)?.trace))
    }

    /// Estimates detector `id`'s transfer function from `records` simulated pairs.
    pub fn calibrate(&self, id: u16, records: usize, seed: u64) -> Result<ImpulseEstimate> {
        let d = self.chain.digitizer();
        let mut acc = CorrelationAccumulator::new(d.record_len, d.dt());
        for k in 0..records {
            let (x, y) = self.calibration_pair(id, k as u64, seed)?;
            acc.push(&x, &y)?;
        }
        acc.estimate(&self.cfg.calibration.sysid)
    }

    /// Analytic transfer function of detector `id`'s chain.
    pub fn analytic_channel(&self, id: u16) -> Result<RecoveryChannel> {
        let r = &self.cfg.resonators[self.index_of(id)?];
        let transfer = analytic_transfer(r, &self.cfg.fanin, &self.cfg.digitizer)?;
        Ok(RecoveryChannel { detector_id: id, transfer, valid: None })
    }

    /// Analytic transfer functions of every detector.
    pub fn analytic_bank(&self) -> Result<Vec<RecoveryChannel>> {
        self.cfg.resonators.iter().map(|r| self.analytic_channel(r.id)).collect()
    }

    /// Recovers the anode pulse of `channel`'s detector from a fan-in record.
    pub fn recover(&self, fanin: &Trace, channel: &RecoveryChannel) -> Result<Trace> {
        deconvolve(fanin, &channel.transfer, channel.valid.as_deref(), &self.cfg.deconv)
    }

    /// Recovers every detector present in a record's fan-in channels. With a
    /// shared fan-in only the dominant resonator is recovered.
    pub fn recover_channels(&self, fanins: &[Trace], bank: &[RecoveryChannel]) -> Result<Vec<Option<Trace>>> {
        let n = self.cfg.resonators.len();
        let lookup = |id: u16| {
            bank.iter()
                .find(|c| c.detector_id == id)
                .ok_or_else(|| Error::InvalidInput(format!("no transfer function for detector {id}")))
        };
        let mut out = vec![None; n];
        match self.cfg.topology {
            FanInTopology::Shared => {
                let fanin = fanins.first().ok_or_else(|| Error::Format("record has no fan-in channel".into()))?;
                if let Some(id) = classify_detector(fanin, &self.cfg.resonators) {
                    out[self.index_of(id)?] = Some(self.recover(fanin, lookup(id)?)?);
                }
            }
            FanInTopology::PerDetector => {
                if fanins.len() != n {
                    return Err(Error::Format(format!("expected {n} fan-in channels, found {}", fanins.len())));
                }
                for (i, r) in self.cfg.resonators.iter().enumerate() {
                    out[i] = Some(self.recover(&fanins[i], lookup(r.id)?)?);
                }
            }
        }
        Ok(out)
    }

    /// Simulates and recovers one record.
    pub fn process_one(
        &self,
        index: u64,
        events: &[EventTruth],
        seed: u64,
        bank: &[RecoveryChannel],
    ) -> Result<RecordTraces> {
        let sim = self.simulate_one(index, events, seed)?;
        let fanins: Vec<Trace> = sim.fanins.iter().map(|d| d.trace.clone()).collect();
        let recovered = self.recover_channels(&fanins, bank)?;
        Ok(RecordTraces {
            index,
            anodes: sim.anodes.into_iter().map(|d| d.trace).collect(),
            recovered,
            truth: Some(sim.truth),
        })
    }

    /// Charge, CFD time and PSD ratios of one pulse from detector `id`.
    pub fn measure(&self, trace: &Trace, id: u16) -> Result<PulseMeasurement> {
        let k = self.cfg.kevee_per_volt_second(id)?;
        let charge = integrate_charge(trace, self.cfg.charge_gate(), k, &self.conv)?;
        let time_s = cfd_time(trace, &self.cfg.cfd(id)?, &self.conv)?.time();
        let a = &self.cfg.analysis;
        let psd = crate::analysis::psd::psd_scan(trace, a.psd_offsets(), &a.psd, k, &self.conv).ok();
        Ok(PulseMeasurement { charge_kevee: charge.charge_kevee, time_s, psd })
    }

    /// Measures every detector that fired in a record. A detector fired when
    /// its anode exceeds a tenth of the CFD arming level; with a shared
    /// fan-in it must also be the one recovered.
    pub fn measure_record(&self, rec: &RecordTraces) -> Result<Vec<EventRow>> {
        let mut rows = Vec::new();
        for (i, r) in self.cfg.resonators.iter().enumerate() {
            let anode = &rec.anodes[i];
            let level = 0.1 * self.cfg.cfd(r.id)?.threshold_v;
            let m = self.conv.magnitude(anode)?;
            if !m.iter().any(|&v| v >= level) {
                continue;
            }
            let Some(recovered) = &rec.recovered[i] else { continue };
            let truth = rec.truth.as_ref().and_then(|t| t.iter().find(|e| e.detector_id == r.id));
            rows.push(EventRow {
                record: rec.index,
                detector_id: r.id,
                true_energy_kevee: truth.map(|e| e.energy_kevee),
                species: truth.map(|e| e.species),
                anode: self.measure(anode, r.id)?,
                recovered: self.measure(recovered, r.id)?,
            });
        }
        Ok(rows)
    }

    /// Simulates, recovers and measures `n` records in memory.
    pub fn run(&self, n: usize, seed: u64, bank: &[RecoveryChannel]) -> Result<Vec<EventRow>> {
        let events = sample_records(&self.cfg.source, &self.cfg.digitizer, n, seed)?;
        let mut rows = Vec::with_capacity(n);
        for (i, ev) in events.iter().enumerate() {
            let rec = self.process_one(i as u64, ev, seed, bank)?;
            rows.extend(self.measure_record(&rec)?);
        }
        Ok(rows)
    }
}
