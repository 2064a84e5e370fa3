//! `dusev` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O
//! errors.

mod commands;
pub mod config;
pub mod detections;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io { path: PathBuf, source: std::io::Error },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Io { path, source } => write!(f, "error: {}: {source}", path.display()),
        }
    }
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io { .. } => 2,
        }
    }
}

impl From<dusev_core::Error> for CliError {
    fn from(e: dusev_core::Error) -> Self {
        use dusev_core::{CheckpointError, Error};
        match e {
            Error::Io { path, source } => CliError::Io { path, source },
            Error::Checkpoint(CheckpointError::Io { path, source }) => CliError::Io { path, source },
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dusev", version, about = "Cue-fusion risk scoring: data, training, explanations")]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Scenes CSV.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scenes CSV.
    Generate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and history.
    Train {
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model_out: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regression metrics and band report on one split.
    Eval {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: commands::SplitName,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score one scene from a detections JSON file.
    Score {
        #[arg(long, value_name = "FILE")]
        detections: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Include per-layer, per-head attention maps.
        #[arg(long)]
        attention: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Correlations, surrogate tree, Shapley reports, synergy graph and
    /// dependence grids.
    Explain {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        background: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long, value_enum)]
        correlate: Option<config::CorrelationTarget>,
    },
    /// Risk surfaces for all ten cue pairs.
    Surface {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Noise, ablation and jitter reports.
    Perturb {
        #[command(flatten)]
        io: DataArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Single-scene latency statistics.
    Bench {
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    commands::dispatch(config, cli.command)
}
