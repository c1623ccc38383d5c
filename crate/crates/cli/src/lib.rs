//! Command-line front end: reads a JSON config per run, dispatches to the
//! solvers or the simulator and writes a JSON or CSV report.

pub mod commands;
pub mod config;
pub mod output;
pub mod reports;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use output::{Format, SCHEMA_VERSION};

/// Environment variable that replaces the seed given in a config file.
pub const SEED_ENV: &str = "QSOLVER_SEED";

pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const NON_CONVERGENCE: u8 = 3;
    pub const COMPARE_FAILED: u8 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "gatedq", version, about = "Gated single-vacation M/GI/1 queue: exact measures and a simulation check")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Config file (JSON); `-` reads stdin.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Simulation seed; takes precedence over QSOLVER_SEED and the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Truncation tolerance for the branching series.
    #[arg(long, global = true, value_name = "FLOAT")]
    pub eps: Option<f64>,

    /// Iteration cap for the branching series.
    #[arg(long = "max-n", global = true, value_name = "INT")]
    pub max_n: Option<usize>,

    /// Only print errors on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stationary queue length, delay and vacation-end measures.
    Solve,
    /// Run the discrete-event simulator.
    Simulate,
    /// Analytic values against simulation, with a pass/fail per observable.
    Compare,
    /// Busy-cycle means and transforms.
    Busycycle,
    /// The derived batch-service queue.
    Batch,
    /// MAP arrivals: commutativity and the interchange residual.
    Mapcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Busycycle => "busycycle",
            Command::Batch => "batch",
            Command::Mapcheck => "mapcheck",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{failed} of {total} observables outside tolerance")]
    CompareFailed { failed: usize, total: usize },
    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => exit::VALIDATION,
            Failure::NonConvergence(_) => exit::NON_CONVERGENCE,
            Failure::CompareFailed { .. } => exit::COMPARE_FAILED,
            Failure::Internal(_) => exit::INTERNAL,
        }
    }
}

impl From<gatedq::Error> for Failure {
    fn from(e: gatedq::Error) -> Self {
        match e {
            gatedq::Error::NonConvergence { .. } | gatedq::Error::TailBudget(_) => Failure::NonConvergence(e.to_string()),
            e if e.is_validation() => Failure::Validation(e.to_string()),
            e => Failure::Internal(e.into()),
        }
    }
}

/// Runs one subcommand, writing its report. A failed comparison still writes
/// the table before returning `CompareFailed`.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Validation(format!("{} needs --config PATH", cli.command.name())))?;
    let (output, outcome) = commands::dispatch(cli, path)?;
    output.write(cli.format, cli.out.as_deref())?;
    outcome
}
