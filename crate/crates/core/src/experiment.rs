//! The two-phase protocol end to end: train a biased flat model, harvest its
//! confusions into a tree, retrain from scratch with a tree loss, evaluate
//! both with plain argmax.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, SynthSpec};
use crate::eval::{EvalError, MetricsReport};
use crate::losses::{Aggregator, LossError, LossKind, LossSpec};
use crate::model::{self, Architecture, Classifier, ModelError, TrainConfig, TrainOutcome};
use crate::tree::{self, BuildError, CogTree, TreeVariant};
use crate::types::{ClassId, Dataset, LabelSpace, PredictionLog, Seed, Split};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Csv {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
        /// `name,count` file fixing class order and training counts. When
        /// absent, classes follow first appearance in `train`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

/// Optimiser budget for one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub resample: bool,
    pub loss: LossSpec,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PhaseConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            resample: false,
            loss: LossSpec::default(),
        }
    }
}

impl PhaseConfig {
    pub fn train_config(&self, seed: Seed) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            loss: self.loss,
            resample: self.resample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub variant: TreeVariant,
    /// Split the biased model predicts on to collect confusions.
    pub log_split: Split,
    /// Cluster count for the `cluster` variant; defaults to the number of
    /// concepts in the standard tree built from the same log.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_concepts: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            variant: TreeVariant::Standard,
            log_split: Split::Val,
            num_concepts: None,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Seed,
    pub ks: Vec<usize>,
    pub model: Architecture,
    pub data: DataSource,
    pub phase1: PhaseConfig,
    pub tree: TreeConfig,
    pub phase2: PhaseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: Seed::default(),
            ks: vec![1, 3, 5],
            model: Architecture::Linear,
            data: DataSource::default(),
            phase1: PhaseConfig {
                loss: LossSpec::of(LossKind::Ce),
                ..Default::default()
            },
            tree: TreeConfig::default(),
            phase2: PhaseConfig {
                loss: LossSpec::of(LossKind::Cogtree),
                ..Default::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad(format!("ks must be non-empty positive integers, got {:?}", self.ks));
        }
        if let Architecture::Mlp1 { hidden: 0, .. } = self.model {
            return bad("hidden width must be positive".into());
        }
        if self.tree.variant == TreeVariant::Cluster && self.tree.num_concepts == Some(0) {
            return bad("num_concepts must be positive".into());
        }
        for (name, phase) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            phase
                .train_config(self.seed)
                .validate()
                .map_err(|e| ExperimentError::Config(format!("{name}: {e}")))?;
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Seed for phase-1 initialisation and shuffling.
    pub fn phase1_seed(&self) -> Seed {
        Seed(self.seed.0.wrapping_add(1))
    }

    /// Seed for every from-scratch phase-2 model, so compared runs share it.
    pub fn phase2_seed(&self) -> Seed {
        Seed(self.seed.0.wrapping_add(2))
    }

    /// The synthetic spec with the experiment seed applied.
    fn synth_spec(&self, spec: &SynthSpec) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..*spec
        }
    }

    /// Copies the experiment seed into the synthetic spec so that the
    /// config echoes the seed actually used.
    pub fn resolved(mut self) -> Self {
        if let DataSource::Synthetic(spec) = &self.data {
            self.data = DataSource::Synthetic(self.synth_spec(spec));
        }
        self
    }
}

/// Train/val/test splits over one label space.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub space: LabelSpace,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Planted concept head per class, for synthetic data.
    pub planted: Option<Vec<ClassId>>,
    /// SHA-256 over the inputs that produced these splits.
    pub digest: String,
}

impl LoadedData {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn file_digest(paths: &[&Path]) -> Result<String, DataError> {
    let mut all = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })?;
        all.extend_from_slice(crate::io::sha256_hex(&bytes).as_bytes());
    }
    Ok(crate::io::sha256_hex(&all))
}

/// Generates or reads the configured data. Training counts in the returned
/// space always come from the train split.
pub fn load_data(config: &ExperimentConfig) -> Result<LoadedData, ExperimentError> {
    match &config.data {
        DataSource::Synthetic(spec) => {
            let spec = config.synth_spec(spec);
            let d = data::generate_synthetic(&spec)?;
            let digest = crate::io::sha256_hex(
                serde_json::to_string(&spec).expect("spec serializes").as_bytes(),
            );
            Ok(LoadedData {
                space: d.space,
                train: d.train,
                val: d.val,
                test: d.test,
                planted: Some(d.planted),
                digest,
            })
        }
        DataSource::Csv {
            train,
            val,
            test,
            labels,
        } => {
            let (space, train_ds) = match labels {
                Some(lp) => {
                    let s = data::read_labels_csv(lp)?;
                    let ds = data::read_dataset_csv_in_space(train, &s, Split::Train)?;
                    (s, ds)
                }
                None => {
                    let (ds, s) = data::read_dataset_csv(train, Split::Train)?;
                    (s, ds)
                }
            };
            let counts = train_ds.class_histogram(space.len());
            let space = space.with_counts(counts).map_err(DataError::from)?;
            let val_ds = data::read_dataset_csv_in_space(val, &space, Split::Val)?;
            let test_ds = data::read_dataset_csv_in_space(test, &space, Split::Test)?;
            let mut paths: Vec<&Path> = vec![train, val, test];
            if let Some(lp) = labels {
                paths.push(lp);
            }
            Ok(LoadedData {
                space,
                train: train_ds,
                val: val_ds,
                test: test_ds,
                planted: None,
                digest: file_digest(&paths)?,
            })
        }
    }
}

/// Scores every sample and summarises them. The tree is never consulted.
pub fn evaluate(
    model: &Classifier,
    dataset: &Dataset,
    space: &LabelSpace,
    ks: &[usize],
) -> Result<MetricsReport, ExperimentError> {
    let scores = model.forward(dataset.features())?;
    Ok(MetricsReport::build(&scores, dataset.labels(), space, ks)?)
}

/// Output of phase 1: the biased model and the confusions it produced.
#[derive(Debug, Clone)]
pub struct BiasedPhase {
    pub outcome: TrainOutcome,
    pub log: PredictionLog,
}

pub fn run_phase1(
    config: &ExperimentConfig,
    data: &LoadedData,
) -> Result<BiasedPhase, ExperimentError> {
    let seed = config.phase1_seed();
    let init = Classifier::init(config.model, data.train.dim(), data.space.len(), seed);
    let outcome = model::train(
        &init,
        &data.train,
        &data.space,
        None,
        &config.phase1.train_config(seed),
    )?;
    let log = model::predict_log(&outcome.model, data.split(config.tree.log_split))?;
    Ok(BiasedPhase { outcome, log })
}

/// Builds the tree of `variant` from phase-1 results.
pub fn build_tree(
    variant: TreeVariant,
    num_concepts: Option<usize>,
    data: &LoadedData,
    biased: &BiasedPhase,
) -> Result<CogTree, ExperimentError> {
    match variant {
        TreeVariant::Cluster => {
            let k = match num_concepts {
                Some(k) => k,
                None => tree::build_cogtree(&biased.log, &data.space, TreeVariant::Standard)?
                    .nodes()[0]
                    .children
                    .len(),
            };
            Ok(tree::cluster_tree(
                &biased.outcome.model.class_vectors(),
                &data.space,
                k,
            )?)
        }
        v => Ok(tree::build_cogtree(&biased.log, &data.space, v)?),
    }
}

/// Trains a fresh phase-2 model with `phase` settings against `tree`.
pub fn run_phase2(
    config: &ExperimentConfig,
    phase: &PhaseConfig,
    data: &LoadedData,
    tree: Option<&CogTree>,
) -> Result<TrainOutcome, ExperimentError> {
    let seed = config.phase2_seed();
    let init = Classifier::init(config.model, data.train.dim(), data.space.len(), seed);
    let tree = if phase.loss.kind.needs_tree() { tree } else { None };
    Ok(model::train(
        &init,
        &data.train,
        &data.space,
        tree,
        &phase.train_config(seed),
    )?)
}

/// Full two-phase run with its metrics.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub data: LoadedData,
    pub biased: BiasedPhase,
    pub tree: CogTree,
    pub retrained: TrainOutcome,
    pub biased_metrics: MetricsReport,
    pub retrained_metrics: MetricsReport,
}

pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineResult, ExperimentError> {
    config.validate()?;
    let data = load_data(config)?;
    run_pipeline_on(config, data)
}

pub fn run_pipeline_on(
    config: &ExperimentConfig,
    data: LoadedData,
) -> Result<PipelineResult, ExperimentError> {
    let biased = run_phase1(config, &data)?;
    let tree = build_tree(config.tree.variant, config.tree.num_concepts, &data, &biased)?;
    let retrained = run_phase2(config, &config.phase2, &data, Some(&tree))?;
    let biased_metrics = evaluate(&biased.outcome.model, &data.test, &data.space, &config.ks)?;
    let retrained_metrics = evaluate(&retrained.model, &data.test, &data.space, &config.ks)?;
    Ok(PipelineResult {
        data,
        biased,
        tree,
        retrained,
        biased_metrics,
        retrained_metrics,
    })
}

/// One row of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub name: String,
    pub loss: LossSpec,
    pub variant: TreeVariant,
    pub resample: bool,
}

/// Loss-term, tree-shape and aggregator variants plus flat baselines, all
/// sharing the phase-2 budget and seed.
pub fn ablation_grid(base: &PhaseConfig) -> Vec<AblationEntry> {
    let with = |kind: LossKind| LossSpec { kind, ..base.loss };
    let agg = |aggregator: Aggregator| LossSpec {
        kind: LossKind::Cogtree,
        aggregator,
        ..base.loss
    };
    let e = |name: &str, loss, variant, resample| AblationEntry {
        name: name.to_string(),
        loss,
        variant,
        resample,
    };
    use TreeVariant::*;
    vec![
        e("cogtree", agg(Aggregator::Average), Standard, false),
        e("tcb", with(LossKind::Tcb), Standard, false),
        e("tce", with(LossKind::Tce), Standard, false),
        e("cb", with(LossKind::Cb), Flat, false),
        e("ce", with(LossKind::Ce), Flat, false),
        e("fuse_layer", agg(Aggregator::Average), FuseLayer, false),
        e("fuse_subtree", agg(Aggregator::Average), FuseSubtree, false),
        e("cluster_tree", agg(Aggregator::Average), Cluster, false),
        e("cogtree_max", agg(Aggregator::Max), Standard, false),
        e("cogtree_sum", agg(Aggregator::Sum), Standard, false),
        e("focal", with(LossKind::Focal), Flat, false),
        e("resample", with(LossKind::Ce), Flat, true),
    ]
}

/// Entries of the λ sweep, default grid `{0.4, 0.7, 1.0, 1.3, 1.6}`.
pub fn lambda_grid(base: &PhaseConfig, lambdas: &[f64]) -> Vec<AblationEntry> {
    lambdas
        .iter()
        .map(|&lambda| AblationEntry {
            name: format!("cogtree_lambda_{lambda}"),
            loss: LossSpec {
                kind: LossKind::Cogtree,
                lambda,
                ..base.loss
            },
            variant: TreeVariant::Standard,
            resample: false,
        })
        .collect()
}

pub const LAMBDA_GRID: [f64; 5] = [0.4, 0.7, 1.0, 1.3, 1.6];

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub entry: AblationEntry,
    pub tree: CogTree,
    pub metrics: MetricsReport,
    pub history: Vec<model::EpochStats>,
}

/// Runs every entry against the same phase-1 model.
pub fn run_ablation(
    config: &ExperimentConfig,
    data: &LoadedData,
    biased: &BiasedPhase,
    entries: &[AblationEntry],
) -> Result<Vec<AblationResult>, ExperimentError> {
    let mut trees: Vec<(TreeVariant, CogTree)> = Vec::new();
    entries
        .iter()
        .map(|entry| {
            let tree = match trees.iter().find(|(v, _)| *v == entry.variant) {
                Some((_, t)) => t.clone(),
                None => {
                    let t = build_tree(entry.variant, config.tree.num_concepts, data, biased)?;
                    trees.push((entry.variant, t.clone()));
                    t
                }
            };
            let phase = PhaseConfig {
                loss: entry.loss,
                resample: entry.resample,
                ..config.phase2
            };
            let outcome = run_phase2(config, &phase, data, Some(&tree))?;
            let metrics = evaluate(&outcome.model, &data.test, &data.space, &config.ks)?;
            Ok(AblationResult {
                entry: entry.clone(),
                tree,
                metrics,
                history: outcome.history,
            })
        })
        .collect()
}

/// `summary.csv` content: one row per result.
pub fn summary_csv(results: &[AblationResult], ks: &[usize]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("name,loss,tree,aggregator,lambda,resample");
    for k in ks {
        let _ = write!(out, ",mR@{k}");
    }
    for k in ks {
        let _ = write!(out, ",R@{k}");
    }
    out.push('\n');
    for r in results {
        let l = &r.entry.loss;
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.entry.name, l.kind, r.entry.variant, l.aggregator, l.lambda, r.entry.resample
        );
        for v in r.metrics.mean_recall.iter().chain(&r.metrics.recall) {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthSpec {
                num_concepts: 2,
                fine_per_concept: 2,
                head_count: 60,
                tail_count: 8,
                dim: 4,
                ..Default::default()
            }),
            phase1: PhaseConfig {
                epochs: 3,
                loss: LossSpec::of(LossKind::Ce),
                ..Default::default()
            },
            phase2: PhaseConfig {
                epochs: 3,
                loss: LossSpec::of(LossKind::Cogtree),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let cfg = tiny();
        let a = run_pipeline(&cfg).unwrap();
        let b = run_pipeline(&cfg).unwrap();
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.retrained.model, b.retrained.model);
        assert_eq!(a.retrained_metrics.to_json(), b.retrained_metrics.to_json());
        assert_ne!(a.biased.outcome.model, a.retrained.model);
    }

    #[test]
    fn phase2_starts_from_a_fresh_model() {
        let cfg = tiny();
        let data = load_data(&cfg).unwrap();
        let fresh = Classifier::init(cfg.model, data.train.dim(), data.space.len(), cfg.phase2_seed());
        let biased_init =
            Classifier::init(cfg.model, data.train.dim(), data.space.len(), cfg.phase1_seed());
        let shared = fresh
            .params()
            .iter()
            .zip(biased_init.params())
            .filter(|(a, b)| **a != 0.0 && **a == *b)
            .count();
        assert_eq!(shared, 0);
    }

    #[test]
    fn ablation_grid_covers_every_variant() {
        let names: Vec<String> = ablation_grid(&PhaseConfig::default())
            .into_iter()
            .map(|e| e.name)
            .collect();
        for want in [
            "cogtree", "tcb", "tce", "cb", "ce", "fuse_layer", "fuse_subtree", "cluster_tree",
            "cogtree_max", "cogtree_sum", "focal", "resample",
        ] {
            assert!(names.iter().any(|n| n == want), "{want}");
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = ExperimentConfig {
            ks: vec![0],
            ..tiny()
        };
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
        let cfg = ExperimentConfig {
            phase2: PhaseConfig {
                epochs: 0,
                ..Default::default()
            },
            ..tiny()
        };
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = tiny();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
