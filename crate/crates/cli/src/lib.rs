//! Command-line pipeline: train an ensemble, score and evaluate corpora,
//! export feature vectors, inspect ensemble diversity, sample sequences and
//! train the neural classification head.
//!
//! Every command is a pure function of its configuration and input files.
//! Each output begins with provenance (configuration hash and seed): `#`
//! comment lines in CSV files, top-level keys in JSON files.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{LoadedConfig, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hmme", version, about = "HMM ensemble sequence classification")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: `output.dir` from the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Class {
    Positive,
    Negative,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an ensemble on `data.train`.
    Train,
    /// Composite scores and member log-likelihoods for a corpus.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// AUC, average precision and confusion counts on a labeled corpus.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Labeled corpus (default: `data.test`).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Share used to choose the threshold (default: `data.calibration_fraction`).
        #[arg(long)]
        calibration: Option<f64>,
    },
    /// Normalized likelihood feature vectors for a corpus.
    Features {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Pairwise similarity matrix of the ensemble members.
    Diversity {
        #[arg(long)]
        model: PathBuf,
    },
    /// Sample sequences from one class of the ensemble.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        class: Class,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        length: usize,
    },
    /// Train the neural head on exported feature vectors.
    ClassifyNn {
        #[arg(long)]
        features: PathBuf,
        /// CSV holding a label column aligned with the feature rows.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, requires = "test_labels")]
        test_features: Option<PathBuf>,
        #[arg(long, requires = "test_features")]
        test_labels: Option<PathBuf>,
    },
}

/// Runs a parsed command line on a pool of `cli.threads` workers.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| commands::dispatch(cli))
}
