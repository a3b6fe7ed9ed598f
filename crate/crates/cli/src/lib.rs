//! The `tribench` command line: every experiment runs from one resolved
//! configuration into its own run directory.

pub mod commands;
pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("compute: {0}")]
    Compute(String),
}

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 compute.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Compute(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tribench", version, about = "MNIST workbench: Boltzmann machines, evolved CNNs, spiking networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Dotted-key override, e.g. `rbm.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect or verify MNIST files.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a Boltzmann machine.
    Train {
        #[arg(value_enum)]
        model: TrainModel,
    },
    /// Sampler checks.
    #[command(subcommand)]
    Sampler(SamplerCommand),
    /// Evolutionary search.
    Evolve {
        #[arg(value_enum)]
        target: EvolveTarget,
    },
    /// Spiking-network utilities.
    #[command(subcommand)]
    Snn(SnnCommand),
    /// Summarize run directories.
    Report {
        /// Run directories, or parents of run directories.
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Print a dataset manifest (count, label histogram, checksums).
    Inspect {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Image file; defaults to the split's file under `data.dir`.
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
    },
    /// Verify user-supplied MNIST files against published checksums.
    Fetch,
}

#[derive(Debug, Subcommand)]
pub enum SamplerCommand {
    /// Compare Gibbs and single-rung annealing against exact enumeration.
    Validate,
}

#[derive(Debug, Subcommand)]
pub enum SnnCommand {
    /// Energy and power of a network's activity.
    Energy {
        /// Network JSON; defaults to the reference network and stimulus.
        #[arg(long)]
        network: Option<PathBuf>,
        /// Phase-energy profile JSON; defaults to the reference profile.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainModel {
    Rbm,
    Lbm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvolveTarget {
    Cnn,
    Snn,
}
