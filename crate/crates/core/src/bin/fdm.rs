//! Command-line front end: configuration, simulation, calibration, recovery
//! and analysis of multiplexed detector records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fdm_recover::commands::{self, TransferSource, Which};
use fdm_recover::config::{RunConfig, PRESETS};
use fdm_recover::io::CalibrationFile;
use fdm_recover::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fdm",
    version,
    about = "Frequency-domain multiplexed detector readout: simulate, calibrate, recover, analyze"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration with every default spelled out.
    Init {
        /// Starting preset.
        #[arg(long, default_value = "cs137-organic", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate physics records, or white-noise calibration records.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Records to generate.
        #[arg(long)]
        records: usize,
        /// Output record file.
        #[arg(long)]
        out: PathBuf,
        /// Produce calibration records instead of physics records.
        #[arg(long)]
        calibration: bool,
        /// Detector driven by the calibration input.
        #[arg(long, default_value_t = 0)]
        channel: u16,
    },
    /// Estimate a detector's transfer function from calibration records.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Calibration record file.
        #[arg(long)]
        input: PathBuf,
        /// Detector the records belong to.
        #[arg(long, default_value_t = 0)]
        channel: u16,
        /// Output calibration file; a JSON summary is written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Accept inputs produced by a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Add recovered channels to a physics record file.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Physics record file.
        #[arg(long)]
        input: PathBuf,
        /// Calibration files, one per detector.
        #[arg(long = "calibration", required_unless_present = "analytic")]
        calibrations: Vec<PathBuf>,
        /// Use the closed-form chain response instead of calibrations.
        #[arg(long, conflicts_with = "calibrations")]
        analytic: bool,
        /// Output record file.
        #[arg(long)]
        out: PathBuf,
        /// Accept inputs produced by a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Compare anode and recovered observables.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Recovered record file.
        #[arg(long)]
        input: PathBuf,
        /// Analyses: charge, spectrum, timing, coincidence, psd, reconstruction.
        #[arg(long, value_delimiter = ',', default_value = "charge,spectrum,timing,reconstruction")]
        which: Vec<String>,
        /// Restrict event analyses to these detectors.
        #[arg(long = "channel", value_delimiter = ',')]
        channels: Vec<u16>,
        /// Output directory for CSV and JSON files.
        #[arg(long)]
        out: PathBuf,
        /// Accept inputs produced by a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Merge the JSON outputs of an analysis directory.
    Report {
        /// Analysis directory.
        #[arg(long)]
        input: PathBuf,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { preset, out } => emit(RunConfig::preset(&preset)?.to_toml()?.trim_end(), out.as_deref()),
        Command::Simulate { common, records, out, calibration, channel } => {
            let cfg = load_config(&common)?;
            let mut w = create(&out)?;
            let summary = if calibration {
                commands::simulate_calibration(&cfg, channel, records, &mut w)?
            } else {
                commands::simulate(&cfg, records, &mut w)?
            };
            w.flush()?;
            emit(&to_json(&summary)?, None)
        }
        Command::Calibrate { common, input, channel, out, force } => {
            let cfg = load_config(&common)?;
            let (file, summary) = commands::calibrate(&cfg, channel, open(&input)?, force)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            let mut w = create(&out)?;
            file.write(&mut w)?;
            w.flush()?;
            emit(&to_json(&summary)?, Some(&out.with_extension("json")))
        }
        Command::Recover { common, input, calibrations, analytic, out, force } => {
            let cfg = load_config(&common)?;
            let source = if analytic {
                TransferSource::Analytic
            } else {
                let files = calibrations.iter().map(|p| CalibrationFile::read(open(p)?)).collect::<Result<_>>()?;
                TransferSource::Calibrated(files)
            };
            let mut w = create(&out)?;
            let summary = commands::recover(&cfg, open(&input)?, source, force, &mut w)?;
            w.flush()?;
            emit(&to_json(&summary)?, None)
        }
        Command::Analyze { common, input, which, channels, out, force } => {
            let cfg = load_config(&common)?;
            let which: Vec<Which> = which.iter().map(|w| w.parse()).collect::<Result<_>>()?;
            let detectors = (!channels.is_empty()).then_some(channels.as_slice());
            let (rows, outputs) = commands::analyze(&cfg, open(&input)?, &which, detectors, force)?;
            for p in commands::write_analysis(&out, &rows, &outputs)? {
                eprintln!("wrote {}", p.display());
            }
            let failed: Vec<String> =
                outputs.iter().filter_map(|o| o.error.as_ref().map(|e| format!("{}: {e}", o.analysis))).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Fit(failed.join("; ")))
            }
        }
        Command::Report { input, out } => emit(&to_json(&commands::report(&input)?)?, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
