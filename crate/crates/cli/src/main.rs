mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cogtree::losses::{Aggregator, LossKind};
use cogtree::tree::TreeVariant;
use cogtree::Split;

/// Confusion-driven label trees and tree-structured class-balanced losses
/// for long-tailed classification.
#[derive(Debug, Parser)]
#[command(name = "cogtree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed dataset as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Build a label tree from a prediction log, or from a fresh biased model.
    BuildTree {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tree: TreeFlags,
        /// Prediction log CSV (`ground_truth,predicted`). Needs --labels.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Class list (`name,count`) for --log.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Biased model whose output rows are clustered (cluster variant).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train one model from scratch with any loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        tree: TreeFlags,
        /// Existing tree JSON for tree losses; otherwise one is built.
        #[arg(long)]
        tree_file: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with per-class and mean Recall@K.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = Split::Test)]
        split: Split,
    },
    /// Biased training, tree building, retraining and evaluation in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        tree: TreeFlags,
        /// Also run the loss, tree-shape and aggregator ablations.
        #[arg(long)]
        ablate: bool,
        /// Also sweep λ over 0.4, 0.7, 1.0, 1.3, 1.6.
        #[arg(long)]
        lambda_sweep: bool,
    },
}

/// Flags shared by every subcommand. Precedence: flag, then config file,
/// then built-in default.
#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Read train.csv, val.csv, test.csv and labels.csv from this directory
    /// instead of the configured data source.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    aggregator: Option<Aggregator>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Class-balanced resampling of every epoch.
    #[arg(long)]
    resample: bool,
}

#[derive(Debug, Args)]
struct TreeFlags {
    #[arg(long)]
    variant: Option<TreeVariant>,
    /// Split the biased model predicts on.
    #[arg(long)]
    log_split: Option<Split>,
    /// Cluster count for the cluster variant.
    #[arg(long)]
    num_concepts: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
