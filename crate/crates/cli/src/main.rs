mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::{ExperimentConfig, Mode};
use output::Output;

/// Simulation and calibration of a two-ion Mølmer-Sørensen gate driven while
/// the ions are transported through a focused beam.
#[derive(Parser)]
#[command(name = "tgate", version)]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Readout shots for fidelity measurements and sampled scans.
    #[arg(long, global = true)]
    shots: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the transport waveform and flatten its confinement and velocity.
    BuildWaveform,
    /// Calibrate and run the gate, then estimate its Bell-state fidelity.
    RunGate,
    /// Calibrate the gate, then scan δm or δg at the calibrated power.
    Scan,
    /// Run the calibration chain with a noiseless fidelity check.
    Calibrate,
    /// Check the propagator and formulas against independent oracles.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::BuildWaveform => "build-waveform",
            Command::RunGate => "run-gate",
            Command::Scan => "scan",
            Command::Calibrate => "calibrate",
            Command::Selftest => "selftest",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.run.mode = mode;
    }
    if let Some(shots) = cli.shots {
        cfg.gate.shots = shots;
        cfg.scan.shots = shots;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.display().to_string();
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    let mut out = Output::create(PathBuf::from(&cfg.run.out).as_path(), &cfg.sha256())?;
    match cli.command {
        Command::BuildWaveform => commands::build_waveform(&cfg, &mut out)?,
        Command::RunGate => commands::run_gate(&cfg, &mut out)?,
        Command::Scan => commands::scan(&cfg, &mut out)?,
        Command::Calibrate => commands::calibrate(&cfg, &mut out)?,
        Command::Selftest => commands::selftest(&cfg, &mut out)?,
    }
    out.finish(cli.command.name(), &cfg.canonical())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tgate {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
