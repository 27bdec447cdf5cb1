//! Config resolution: built-in defaults, overlaid by the `--config` file,
//! overlaid by command-line flags.

use std::path::Path;

use cogtree::experiment::{DataSource, ExperimentConfig, PhaseConfig};
use cogtree::Seed;

use crate::error::CliError;
use crate::{Common, TrainFlags, TreeFlags};

pub fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = Seed(seed);
    }
    if let Some(ks) = &common.ks {
        config.ks = ks.clone();
    }
    if let Some(dir) = &common.data_dir {
        config.data = csv_dir(dir);
    }
    Ok(config)
}

pub fn csv_dir(dir: &Path) -> DataSource {
    DataSource::Csv {
        train: dir.join("train.csv"),
        val: dir.join("val.csv"),
        test: dir.join("test.csv"),
        labels: Some(dir.join("labels.csv")),
    }
}

pub fn apply_train(phase: &mut PhaseConfig, flags: &TrainFlags) {
    if let Some(kind) = flags.loss {
        phase.loss.kind = kind;
    }
    if let Some(lambda) = flags.lambda {
        phase.loss.lambda = lambda;
    }
    if let Some(beta) = flags.beta {
        phase.loss.beta = beta;
    }
    if let Some(gamma) = flags.gamma {
        phase.loss.gamma = gamma;
    }
    if let Some(agg) = flags.aggregator {
        phase.loss.aggregator = agg;
    }
    apply_budget(phase, flags);
    if flags.resample {
        phase.resample = true;
    }
}

/// Epochs, batch size and learning rate only.
pub fn apply_budget(phase: &mut PhaseConfig, flags: &TrainFlags) {
    if let Some(epochs) = flags.epochs {
        phase.epochs = epochs;
    }
    if let Some(batch) = flags.batch_size {
        phase.batch_size = batch;
    }
    if let Some(lr) = flags.learning_rate {
        phase.learning_rate = lr;
    }
}

pub fn apply_tree(config: &mut ExperimentConfig, flags: &TreeFlags) {
    if let Some(v) = flags.variant {
        config.tree.variant = v;
    }
    if let Some(s) = flags.log_split {
        config.tree.log_split = s;
    }
    if flags.num_concepts.is_some() {
        config.tree.num_concepts = flags.num_concepts;
    }
}

/// Validates and renders the final config as it will be echoed.
pub fn finish(config: ExperimentConfig) -> Result<(ExperimentConfig, String), CliError> {
    let config = config.resolved();
    config.validate()?;
    let text = toml::to_string(&config).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, text))
}
