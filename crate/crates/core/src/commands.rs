//! File-level operations behind each command-line subcommand.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::chain::{DigitizerSpec, FanInTopology, SimulatedRecord};
use crate::config::RunConfig;
use crate::deconv::{recovery_report, ResidualStats};
use crate::error::{Error, Result};
use crate::io::{
    check_hash, CalibrationFile, ChannelInfo, Record, RecordHeader, RecordReader, RecordWriter, SampleEncoding,
};
use crate::pipeline::{EventRow, Pipeline, RecordTraces, RecoveryChannel};
use crate::signal::Trace;
use crate::summary::Analysis;
use crate::sysid::{whiten_check, WhitenessReport};

/// Recovered channels are stored this many times finer than the digitizer.
pub const RECOVERED_SUBCODES: f64 = 256.0;
/// Calibration records kept in memory for the whiteness check.
pub const WHITENESS_RECORDS: usize = 1000;

/// Label of detector `id`'s anode pass-through.
pub fn anode_label(id: u16) -> String {
    format!("anode{id}")
}

/// Label of detector `id`'s recovered pulse.
pub fn recovered_label(id: u16) -> String {
    format!("recovered{id}")
}

/// Labels of the fan-in channels for a topology.
pub fn fanin_labels(cfg: &RunConfig) -> Vec<String> {
    match cfg.topology {
        FanInTopology::Shared => vec!["fanin".into()],
        FanInTopology::PerDetector => cfg.resonators.iter().map(|r| format!("fanin{}", r.id)).collect(),
    }
}

fn digitizer_encoding(d: &DigitizerSpec) -> SampleEncoding {
    if d.ideal {
        SampleEncoding::F64
    } else {
        SampleEncoding::I16 { scale: d.lsb() }
    }
}

fn recovered_encoding(d: &DigitizerSpec) -> SampleEncoding {
    if d.ideal {
        SampleEncoding::F64
    } else {
        SampleEncoding::I32 { scale: d.lsb() / RECOVERED_SUBCODES }
    }
}

fn header(cfg: &RunConfig, labels: Vec<(String, SampleEncoding)>) -> RecordHeader {
    RecordHeader {
        dt: cfg.digitizer.dt(),
        record_len: cfg.digitizer.record_len,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        channels: labels.into_iter().map(|(label, encoding)| ChannelInfo { label, encoding }).collect(),
    }
}

/// Header of a physics record file.
pub fn simulation_header(cfg: &RunConfig) -> RecordHeader {
    let e = digitizer_encoding(&cfg.digitizer);
    let mut labels: Vec<_> = cfg.resonators.iter().map(|r| (anode_label(r.id), e)).collect();
    labels.extend(fanin_labels(cfg).into_iter().map(|l| (l, e)));
    header(cfg, labels)
}

/// Header of a calibration record file.
pub fn calibration_header(cfg: &RunConfig) -> RecordHeader {
    let e = digitizer_encoding(&cfg.digitizer);
    header(cfg, vec![("input".into(), e), ("output".into(), e)])
}

fn to_record(index: u64, sim: SimulatedRecord) -> Record {
    let channels = sim.anodes.into_iter().chain(sim.fanins).map(|d| d.trace.into_samples()).collect();
    Record { index, channels, truth: Some(sim.truth) }
}

/// Outcome of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    /// Configuration hash.
    pub config_hash: String,
    /// Seed used.
    pub seed: u64,
    /// Records written.
    pub records: usize,
    /// Records with a pulse running past the record end.
    pub truncated: usize,
    /// Records with more than one detector firing.
    pub multi_detector: usize,
    /// Samples that hit a converter rail.
    pub clipped_samples: usize,
}

/// Writes `n` physics records for the configured source.
pub fn simulate(cfg: &RunConfig, n: usize, out: impl Write) -> Result<SimulationSummary> {
    let p = Pipeline::new(cfg.clone())?;
    let mut w = RecordWriter::new(out, simulation_header(cfg))?;
    let mut s = SimulationSummary {
        config_hash: cfg.hash_hex(),
        seed: cfg.seed,
        records: n,
        truncated: 0,
        multi_detector: 0,
        clipped_samples: 0,
    };
    for (i, rec) in p.simulate(n, cfg.seed)?.enumerate() {
        let rec = rec?;
        s.truncated += rec.truncated as usize;
        s.multi_detector += rec.multi_detector as usize;
        s.clipped_samples += rec.clipped();
        w.write(&to_record(i as u64, rec))?;
    }
    w.finish()?;
    Ok(s)
}

/// Writes `n` white-noise calibration records for detector `id`.
pub fn simulate_calibration(cfg: &RunConfig, id: u16, n: usize, out: impl Write) -> Result<SimulationSummary> {
    let p = Pipeline::new(cfg.clone())?;
    let mut w = RecordWriter::new(out, calibration_header(cfg))?;
    for i in 0..n as u64 {
        let (x, y) = p.calibration_pair(id, i, cfg.seed)?;
        w.write(&Record { index: i, channels: vec![x.into_samples(), y.into_samples()], truth: None })?;
    }
    w.finish()?;
    Ok(SimulationSummary {
        config_hash: cfg.hash_hex(),
        seed: cfg.seed,
        records: n,
        truncated: 0,
        multi_detector: 0,
        clipped_samples: 0,
    })
}

fn check_header(cfg: &RunConfig, h: &RecordHeader, force: bool) -> Result<()> {
    if h.record_len != cfg.digitizer.record_len || (h.dt - cfg.digitizer.dt()).abs() > 1e-6 * h.dt {
        return Err(Error::Format(format!(
            "records have {} samples at {} s but the configuration expects {} at {} s",
            h.record_len,
            h.dt,
            cfg.digitizer.record_len,
            cfg.digitizer.dt()
        )));
    }
    if !force {
        check_hash(&cfg.hash(), &h.config_hash, "record file")?;
    }
    Ok(())
}

fn trace_of(h: &RecordHeader, samples: Vec<f64>) -> Result<Trace> {
    Trace::new(samples, h.dt)
}

/// Outcome of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    /// Configuration hash.
    pub config_hash: String,
    /// Seed of the calibration records.
    pub seed: u64,
    /// Detector calibrated.
    pub detector_id: u16,
    /// Record pairs averaged.
    pub records: usize,
    /// Bins with a usable estimate.
    pub valid_bins: usize,
    /// Whiteness of the calibration input.
    pub whiteness: WhitenessReport,
    /// Non-fatal findings.
    pub warnings: Vec<String>,
}

/// Estimates detector `id`'s transfer function from a calibration record file.
pub fn calibrate(
    cfg: &RunConfig,
    id: u16,
    input: impl Read,
    force: bool,
) -> Result<(CalibrationFile, CalibrationSummary)> {
    let p = Pipeline::new(cfg.clone())?;
    p.index_of(id)?;
    let mut r = RecordReader::new(input)?;
    let h = r.header().clone();
    check_header(cfg, &h, force)?;
    let (xi, yi) = (h.channel_index("input")?, h.channel_index("output")?);
    let mut acc = crate::sysid::CorrelationAccumulator::new(h.record_len, h.dt);
    let mut inputs = Vec::new();
    while let Some(mut rec) = r.next_record()? {
        let y = trace_of(&h, std::mem::take(&mut rec.channels[yi]))?;
        let x = trace_of(&h, std::mem::take(&mut rec.channels[xi]))?;
        acc.push(&x, &y)?;
        if inputs.len() < WHITENESS_RECORDS {
            inputs.push(x);
        }
    }
    let est = acc.estimate(&cfg.calibration.sysid)?;
    let whiteness = whiten_check(&inputs, cfg.calibration.whiteness_band_hz)?;
    let mut warnings = whiteness.notes.clone();
    if est.records_averaged < cfg.calibration.records {
        warnings.push(format!(
            "only {} calibration records averaged; {} configured",
            est.records_averaged, cfg.calibration.records
        ));
    }
    let summary = CalibrationSummary {
        config_hash: cfg.hash_hex(),
        seed: h.seed,
        detector_id: id,
        records: est.records_averaged,
        valid_bins: est.valid.iter().filter(|&&v| v).count(),
        whiteness,
        warnings,
    };
    Ok((CalibrationFile { detector_id: id, config_hash: cfg.hash(), estimate: est }, summary))
}

/// Source of the transfer functions used for recovery.
#[derive(Debug, Clone)]
pub enum TransferSource {
    /// Calibration files, one per detector.
    Calibrated(Vec<CalibrationFile>),
    /// Closed-form chain response.
    Analytic,
}

/// Outcome of a recovery run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverySummary {
    /// Configuration hash.
    pub config_hash: String,
    /// Seed of the input records.
    pub seed: u64,
    /// Records processed.
    pub records: usize,
    /// Recovered pulses written.
    pub recovered: usize,
    /// Transfer functions came from the closed form.
    pub analytic: bool,
}

/// Adds a recovered channel per detector to every record of `input`.
pub fn recover(
    cfg: &RunConfig,
    input: impl Read,
    source: TransferSource,
    force: bool,
    out: impl Write,
) -> Result<RecoverySummary> {
    let p = Pipeline::new(cfg.clone())?;
    let mut r = RecordReader::new(input)?;
    let h = r.header().clone();
    check_header(cfg, &h, force)?;
    let analytic = matches!(source, TransferSource::Analytic);
    let bank: Vec<RecoveryChannel> = match source {
        TransferSource::Analytic => p.analytic_bank()?,
        TransferSource::Calibrated(files) => files
            .into_iter()
            .map(|f| {
                if !force {
                    check_hash(&cfg.hash(), &f.config_hash, "calibration")?;
                }
                if f.estimate.transfer.len() != h.record_len {
                    return Err(Error::Format(format!(
                        "calibration has {} bins but records have {} samples",
                        f.estimate.transfer.len(),
                        h.record_len
                    )));
                }
                Ok(RecoveryChannel::from_estimate(f.detector_id, f.estimate))
            })
            .collect::<Result<_>>()?,
    };
    let fanin_idx: Vec<usize> = fanin_labels(cfg).iter().map(|l| h.channel_index(l)).collect::<Result<_>>()?;
    let mut out_header = h.clone();
    let e = recovered_encoding(&cfg.digitizer);
    out_header
        .channels
        .extend(cfg.resonators.iter().map(|r| ChannelInfo { label: recovered_label(r.id), encoding: e }));
    let mut w = RecordWriter::new(out, out_header)?;
    let mut summary = RecoverySummary { config_hash: cfg.hash_hex(), seed: h.seed, records: 0, recovered: 0, analytic };
    while let Some(mut rec) = r.next_record()? {
        let fanins: Vec<Trace> =
            fanin_idx.iter().map(|&i| trace_of(&h, rec.channels[i].clone())).collect::<Result<_>>()?;
        for t in p.recover_channels(&fanins, &bank)? {
            summary.recovered += t.is_some() as usize;
            rec.channels.push(t.map_or_else(|| vec![0.0; h.record_len], Trace::into_samples));
        }
        summary.records += 1;
        w.write(&rec)?;
    }
    w.finish()?;
    Ok(summary)
}

/// Extracts the traces needed for measurement from a recovered record.
/// An all-zero recovered channel marks a detector that was not recovered.
pub fn record_traces(cfg: &RunConfig, h: &RecordHeader, rec: Record) -> Result<RecordTraces> {
    let mut channels: Vec<Option<Vec<f64>>> = rec.channels.into_iter().map(Some).collect();
    let mut take = |label: &str| -> Result<Vec<f64>> {
        let i = h.channel_index(label)?;
        channels[i].take().ok_or_else(|| Error::Format(format!("channel {label:?} listed twice")))
    };
    let mut anodes = Vec::new();
    let mut recovered = Vec::new();
    for r in &cfg.resonators {
        anodes.push(trace_of(h, take(&anode_label(r.id))?)?);
        let s = take(&recovered_label(r.id))?;
        recovered.push(if s.iter().all(|&v| v == 0.0) { None } else { Some(trace_of(h, s)?) });
    }
    Ok(RecordTraces { index: rec.index, anodes, recovered, truth: rec.truth })
}

/// Summary of anode-versus-recovered waveform residuals.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReconstructionSummary {
    /// Pulses compared.
    pub pulses: usize,
    /// Mean residual RMS over the whole record, in volts.
    pub residual_rms: f64,
    /// Mean residual RMS inside the charge gate.
    pub pulse_residual_rms: f64,
    /// Mean residual RMS on the baseline window.
    pub baseline_residual_rms: f64,
    /// Mean RMS of the anode baseline about its mean.
    pub anode_baseline_rms: f64,
    /// Mean RMS of the recovered baseline about its mean.
    pub recovered_baseline_rms: f64,
    /// Largest absolute residual.
    pub max_abs_residual: f64,
}

fn centred_rms(s: &[f64]) -> f64 {
    let m = s.iter().sum::<f64>() / s.len() as f64;
    (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
}

impl ReconstructionSummary {
    /// Adds one anode and recovered pulse pair.
    pub fn push(&mut self, stats: &ResidualStats, anode: &Trace, recovered: &Trace, baseline: std::ops::Range<usize>) {
        self.pulses += 1;
        self.residual_rms += stats.rms;
        self.pulse_residual_rms += stats.pulse_rms;
        self.baseline_residual_rms += stats.baseline_rms;
        self.anode_baseline_rms += centred_rms(&anode.samples()[baseline.clone()]);
        self.recovered_baseline_rms += centred_rms(&recovered.samples()[baseline]);
        self.max_abs_residual = self.max_abs_residual.max(stats.max_abs);
    }

    /// Converts sums to means.
    pub fn finish(mut self) -> Self {
        let n = self.pulses.max(1) as f64;
        self.residual_rms /= n;
        self.pulse_residual_rms /= n;
        self.baseline_residual_rms /= n;
        self.anode_baseline_rms /= n;
        self.recovered_baseline_rms /= n;
        self
    }
}

/// Analyses requested from `analyze`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    /// One of the event-level analyses.
    Event(Analysis),
    /// Waveform residuals.
    Reconstruction,
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "reconstruction" {
            Ok(Which::Reconstruction)
        } else {
            s.parse().map(Which::Event)
        }
    }
}

impl Which {
    /// Name used for output files.
    pub fn name(self) -> &'static str {
        match self {
            Which::Event(a) => a.name(),
            Which::Reconstruction => "reconstruction",
        }
    }
}

/// Outcome of one analysis, with the run's provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisOutput {
    /// Analysis name.
    pub analysis: String,
    /// Configuration hash.
    pub config_hash: String,
    /// Seed of the input records.
    pub seed: u64,
    /// Records read.
    pub records: usize,
    /// Pulses measured.
    pub pulses: usize,
    /// Summary when the analysis completed.
    pub summary: Option<Value>,
    /// Reason the analysis could not be completed.
    pub error: Option<String>,
}

/// Measures every record of a recovered file and runs the requested analyses.
/// Returns the per-pulse rows and one output per analysis; failed fits are
/// reported inside the output rather than aborting the others.
pub fn analyze(
    cfg: &RunConfig,
    input: impl Read,
    which: &[Which],
    detectors: Option<&[u16]>,
    force: bool,
) -> Result<(Vec<EventRow>, Vec<AnalysisOutput>)> {
    let p = Pipeline::new(cfg.clone())?;
    let mut r = RecordReader::new(input)?;
    let h = r.header().clone();
    check_header(cfg, &h, force)?;
    for d in cfg.resonators.iter() {
        h.channel_index(&anode_label(d.id))?;
        h.channel_index(&recovered_label(d.id))?;
    }
    let mut rows = Vec::new();
    let mut recon = ReconstructionSummary::default();
    let gate = cfg.charge_gate();
    let baseline = p.conventions().baseline.clone();
    let mut records = 0;
    while let Some(rec) = r.next_record()? {
        records += 1;
        let traces = record_traces(cfg, &h, rec)?;
        let measured = p.measure_record(&traces)?;
        for row in &measured {
            let i = p.index_of(row.detector_id)?;
            if let Some(rt) = &traces.recovered[i] {
                let stats = recovery_report(&traces.anodes[i], rt, baseline.clone(), gate.clone())?;
                recon.push(&stats, &traces.anodes[i], rt, baseline.clone());
            }
        }
        rows.extend(measured.into_iter().filter(|row| detectors.is_none_or(|d| d.contains(&row.detector_id))));
    }
    let recon = recon.finish();
    let outputs = which
        .iter()
        .map(|w| {
            let result = match w {
                Which::Event(a) => a.run(&rows, cfg),
                Which::Reconstruction => serde_json::to_value(&recon).map_err(|e| Error::Format(e.to_string())),
            };
            AnalysisOutput {
                analysis: w.name().into(),
                config_hash: cfg.hash_hex(),
                seed: h.seed,
                records,
                pulses: rows.len(),
                error: result.as_ref().err().map(ToString::to_string),
                summary: result.ok(),
            }
        })
        .collect();
    Ok((rows, outputs))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Writes per-pulse measurements as CSV.
pub fn write_events_csv(rows: &[EventRow], mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "record,detector,species,true_energy_kevee,anode_charge_kevee,recovered_charge_kevee,anode_time_s,recovered_time_s"
    )?;
    for r in rows {
        let species = r.species.map_or("", |s| match s {
            crate::detector::Species::Gamma => "gamma",
            crate::detector::Species::Neutron => "neutron",
        });
        writeln!(
            w,
            "{},{},{},{},{:e},{:e},{},{}",
            r.record,
            r.detector_id,
            species,
            fmt_opt(r.true_energy_kevee),
            r.anode.charge_kevee,
            r.recovered.charge_kevee,
            fmt_opt(r.anode.time_s),
            fmt_opt(r.recovered.time_s)
        )?;
    }
    Ok(())
}

/// Writes each output as `<dir>/<analysis>.json` and the rows as
/// `<dir>/events.csv`; returns the written paths.
pub fn write_analysis(dir: &Path, rows: &[EventRow], outputs: &[AnalysisOutput]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let csv = dir.join("events.csv");
    let mut w = BufWriter::new(File::create(&csv)?);
    write_events_csv(rows, &mut w)?;
    w.flush()?;
    paths.push(csv);
    for o in outputs {
        let path = dir.join(format!("{}.json", o.analysis));
        let text = serde_json::to_string_pretty(o).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        paths.push(path);
    }
    Ok(paths)
}

/// Collects the analysis JSON files of a directory into one document keyed
/// by analysis name.
pub fn report(dir: &Path) -> Result<Value> {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.retain(|p| p.extension().is_some_and(|e| e == "json") && p.file_stem().is_some_and(|s| s != "report"));
    entries.sort();
    let mut doc = serde_json::Map::new();
    for p in entries {
        let v: Value = serde_json::from_reader(BufReader::new(File::open(&p)?))
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let name = v.get("analysis").and_then(Value::as_str).map(str::to_owned);
        if let Some(name) = name {
            doc.insert(name, v);
        }
    }
    if doc.is_empty() {
        return Err(Error::InvalidInput(format!("no analysis outputs in {}", dir.display())));
    }
    Ok(json!(doc))
}
