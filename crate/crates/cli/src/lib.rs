//! Command-line driver: dataset generation, diffusion distances, coarse-graph
//! search, graph-limit curves, training experiments and FLOPs tables.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, Format, LoadedConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<gpcn_core::Error> for CliError {
    fn from(e: gpcn_core::Error) -> Self {
        use gpcn_core::Error::*;
        match e {
            NotSymmetric(_) | NoConvergence { .. } | Diverged { .. } | NonFiniteLoss { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gpcn",
    version,
    about = "Graph prolongation convolutional network experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset file format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the strength grid and write a dataset.
    Generate(Common),
    /// Distance between two graphs and the optimal prolongation.
    Gdd {
        /// Coarse graph: an edge-list file, `tube:n,k,p[,w]` or `grid:r,c`.
        coarse: String,
        /// Fine graph, same forms.
        fine: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Distances from a fine tube to a family of coarse tubes.
    CoarseSearch(Common),
    /// Distances of tube and grid families to doubled tubes.
    LimitCurve(Common),
    /// Train models on a dataset.
    Train(Common),
    /// Per-layer forward FLOPs of a named model.
    Flops {
        model: String,
        /// Fine tube ring count.
        #[arg(long, default_value_t = 12)]
        rings: usize,
        #[arg(long, default_value_t = 10)]
        in_features: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
