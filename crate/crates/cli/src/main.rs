//! Command-line front end: calibrates the adaptive relaying protocols,
//! simulates them, sweeps rate regions and compares against the
//! conventional schedules.
//!
//! Exit codes: 0 on success, 2 for a configuration error, 3 when a weight
//! cannot be calibrated and 1 for anything else.

mod commands;
mod config;
mod table;
mod weights;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CalibrationFailed;
use crate::config::{ConfigError, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "bdrelay",
    version,
    about = "Buffer-aided bidirectional relaying: calibration, simulation and rate regions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the long-term weights and write a weights document.
    Calibrate(Common),
    /// Simulate the adaptive protocol at every configured weight.
    Simulate(WithWeights),
    /// Sweep the rate region of the adaptive protocol, plus conventional
    /// subsets given with --subset.
    Region(WithWeights),
    /// Evaluate the conventional schedules.
    Benchmark(Common),
    /// Size the relay buffers for a list of delay targets and report the rates.
    DelaySweep(WithWeights),
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the channel, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of slots to simulate.
    #[arg(long)]
    slots: Option<u64>,
    /// A weight in (0, 1) or `grid`.
    #[arg(long)]
    eta: Option<String>,
    /// Mode subsets: presets (tdbc, mabc, hbc, traditional, all,
    /// conventional) or lists like `1,2,6`, separated by `;`.
    #[arg(long)]
    subset: Option<String>,
    /// Target mean delay in slots for the delay-constrained protocol.
    #[arg(long)]
    delay: Option<f64>,
}

#[derive(Args)]
struct WithWeights {
    #[command(flatten)]
    common: Common,
    /// Weights document from `calibrate`; calibrates on demand when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let overrides = Overrides {
            seed: self.seed,
            slots: self.slots,
            eta: self.eta.clone(),
            subset: self.subset.clone(),
            delay: self.delay,
            out: self.out.clone(),
        };
        RunConfig::load(&self.config, &overrides)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate(c) => commands::calibrate(&c.load()?),
        Command::Simulate(w) => commands::simulate(&w.common.load()?, w.weights.as_deref()),
        Command::Region(w) => commands::region(&w.common.load()?, w.weights.as_deref()),
        Command::Benchmark(c) => commands::benchmark(&c.load()?),
        Command::DelaySweep(w) => commands::delay_sweep(&w.common.load()?, w.weights.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<CalibrationFailed>() || cause.is::<bdrelay::CalibrationFailure>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
