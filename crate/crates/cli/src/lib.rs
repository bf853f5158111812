//! Reproducible runs: simulate a landscape, train an operator, evaluate it,
//! run the ablation grid, and score clonal fates.
//!
//! Every command reads an optional TOML config (unknown keys are errors),
//! applies flag overrides, and writes the effective config to
//! `config.toml` in its output directory. Re-running with that file and
//! `--deterministic` reproduces every output byte for byte.

pub mod ablate;
mod commands;
pub mod config;

use std::path::PathBuf;

use chreode::evaluator::EvalError;
use chreode::landscape::{DatasetError, SimError};
use chreode::operator::{ModelError, VariantKind};
use chreode::population_losses::LossError;
use chreode::trainer::{PairMode, TrainError};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{eval, fate, simulate, train, IDENTITY_CHECKPOINT};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } | ModelError::Diff(_) => CliError::Numerical(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(_) | TrainError::Shape(_) | TrainError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Config(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Loss(LossError::NonFiniteCost) => CliError::Numerical(e.to_string()),
            EvalError::Loss(LossError::InvalidConfig(_)) => CliError::Config(e.to_string()),
            EvalError::Sim(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "chreode", version, about = "Simulate, train, evaluate and ablate one-step transition operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags every command takes.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config for the command; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run single-threaded. Results do not depend on the thread count, but
    /// this pins it.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic landscape into a dataset file.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train an operator on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// selected | unconstrained | tied_time2vec | tied_fourier
        #[arg(long)]
        variant: Option<VariantKind>,
        /// all_ordered | endpoint_only
        #[arg(long = "pair-mode")]
        pair_mode: Option<PairMode>,
    },
    /// Held-out transition metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file, or `builtin:identity` for the source-replay stub.
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Train and evaluate every ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Training seeds per variant.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Clonal fate scores of a checkpoint on a clone benchmark.
    Fate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: String,
        /// Clone benchmark file (source and atlas snapshots).
        #[arg(long)]
        data: PathBuf,
        /// Stochastic draws per source.
        #[arg(long = "K")]
        k: Option<usize>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Fate { common, .. } => common,
        }
    }
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let go = || match &cli.command {
        Command::Simulate { common } => simulate(common).map(|_| ()),
        Command::Train {
            common,
            data,
            variant,
            pair_mode,
        } => train(common, data, *variant, *pair_mode).map(|_| ()),
        Command::Eval {
            common,
            checkpoint,
            data,
            seeds,
        } => eval(common, checkpoint, data, *seeds).map(|_| ()),
        Command::Ablate { common, data, seeds } => ablate::ablate(common, data, *seeds).map(|_| ()),
        Command::Fate {
            common,
            checkpoint,
            data,
            k,
        } => fate(common, checkpoint, data, *k).map(|_| ()),
    };
    if cli.command.common().deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(go)
    } else {
        go()
    }
}
