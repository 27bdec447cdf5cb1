use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use cogtree::data::{self, write_dataset_csv, write_labels_csv, write_prediction_log_csv};
use cogtree::eval::MetricsReport;
use cogtree::experiment::{self, DataSource, ExperimentConfig, LoadedData};
use cogtree::io::{sha256_hex, write_atomic};
use cogtree::model::{Checkpoint, Classifier, EpochStats};
use cogtree::tree::{self, CogTree, TreeVariant};
use cogtree::{LabelSpace, Split};

use crate::error::CliError;
use crate::settings;
use crate::Command;

const MANIFEST_VERSION: u32 = 1;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { common } => {
            let config = settings::load(&common)?;
            gen_data(config, &common.out)
        }
        Command::BuildTree {
            common,
            tree,
            log,
            labels,
            checkpoint,
        } => {
            let mut config = settings::load(&common)?;
            settings::apply_tree(&mut config, &tree);
            match log {
                Some(log) => {
                    let labels = labels.ok_or_else(|| {
                        CliError::Config("--log needs --labels to fix the class order".into())
                    })?;
                    build_tree_from_log(config, &log, &labels, checkpoint.as_deref(), &common.out)
                }
                None => build_tree_from_data(config, &common.out),
            }
        }
        Command::Train {
            common,
            train,
            tree,
            tree_file,
        } => {
            let mut config = settings::load(&common)?;
            settings::apply_train(&mut config.phase2, &train);
            settings::apply_tree(&mut config, &tree);
            train_one(config, tree_file.as_deref(), &common.out)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let config = settings::load(&common)?;
            eval(config, &checkpoint, split, &common.out)
        }
        Command::Pipeline {
            common,
            train,
            tree,
            ablate,
            lambda_sweep,
        } => {
            let mut config = settings::load(&common)?;
            settings::apply_budget(&mut config.phase1, &train);
            settings::apply_train(&mut config.phase2, &train);
            settings::apply_tree(&mut config, &tree);
            pipeline(config, ablate, lambda_sweep, &common.out)
        }
    }
}

/// Output directory whose files are all written by rename.
struct Out {
    dir: PathBuf,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Out {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        write_atomic(&path, contents.as_ref())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    /// The resolved config plus seed and digests of this run.
    fn record_run(
        &self,
        command: &str,
        config: &ExperimentConfig,
        config_text: &str,
        input_digest: &str,
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            version: u32,
            command: &'a str,
            tool_version: &'a str,
            seed: u64,
            config_digest: String,
            input_digest: &'a str,
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: config.seed.0,
            config_digest: sha256_hex(config_text.as_bytes()),
            input_digest,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        self.write("config.toml", config_text)?;
        self.write("manifest.json", json)
    }

    fn tree(&self, tree: &CogTree) -> Result<(), CliError> {
        self.write("tree.json", tree.to_json())?;
        self.write("tree.dot", tree::to_dot(tree))
    }

    fn metrics(&self, prefix: &str, report: &MetricsReport) -> Result<(), CliError> {
        self.write(&format!("{prefix}metrics.json"), report.to_json())?;
        self.write(&format!("{prefix}metrics.txt"), report.to_table())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Classifier, CliError> {
    let ck = Checkpoint::from_json(&read_text(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Classifier::from_checkpoint(&ck)?)
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for h in history {
        let _ = writeln!(out, "{},{},{}", h.epoch, h.mean_loss, h.train_accuracy);
    }
    out
}

fn check_space(tree: &CogTree, space: &LabelSpace) -> Result<(), CliError> {
    if tree.labels() != space.names() {
        return Err(CliError::Data(
            "tree classes do not match the dataset's classes".into(),
        ));
    }
    Ok(())
}

fn gen_data(config: ExperimentConfig, out: &Path) -> Result<(), CliError> {
    if !matches!(config.data, DataSource::Synthetic(_)) {
        return Err(CliError::Config(
            "gen-data needs a synthetic data source".into(),
        ));
    }
    let (config, text) = settings::finish(config)?;
    let data = experiment::load_data(&config)?;
    let out = Out::new(out)?;
    write_dataset_csv(&data.train, &data.space, &out.path("train.csv"))?;
    write_dataset_csv(&data.val, &data.space, &out.path("val.csv"))?;
    write_dataset_csv(&data.test, &data.space, &out.path("test.csv"))?;
    write_labels_csv(&data.space, &out.path("labels.csv"))?;
    if let Some(planted) = &data.planted {
        let mut csv = String::from("class,concept\n");
        for (c, &head) in planted.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", data.space.name(c), data.space.name(head));
        }
        out.write("planted.csv", csv)?;
    }
    out.record_run("gen-data", &config, &text, &data.digest)?;
    println!(
        "{} classes, {} train / {} val / {} test samples -> {}",
        data.space.len(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.dir.display()
    );
    Ok(())
}

fn describe(tree: &CogTree) -> String {
    let groups = tree.concept_groups();
    let mut s = format!(
        "{} tree: {} concepts, {} nodes\n",
        tree.variant(),
        groups.len(),
        tree.nodes().len()
    );
    for group in groups {
        let names: Vec<&str> = group.iter().map(|&c| tree.labels()[c].as_str()).collect();
        let _ = writeln!(s, "  {}", names.join(" "));
    }
    s
}

fn build_tree_from_log(
    config: ExperimentConfig,
    log_path: &Path,
    labels: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (config, text) = settings::finish(config)?;
    let space = data::read_labels_csv(labels)?;
    let log = data::read_prediction_log_csv(log_path, &space)?;
    let mut digest_input = read_text(log_path)?;
    digest_input.push_str(&read_text(labels)?);
    let tree = match config.tree.variant {
        TreeVariant::Cluster => {
            let path = checkpoint.ok_or_else(|| {
                CliError::Config("the cluster variant needs --checkpoint".into())
            })?;
            let model = read_checkpoint(path)?;
            if model.num_classes() != space.len() {
                return Err(CliError::Data(format!(
                    "checkpoint has {} classes, labels list {}",
                    model.num_classes(),
                    space.len()
                )));
            }
            digest_input.push_str(&read_text(path)?);
            let k = match config.tree.num_concepts {
                Some(k) => k,
                None => tree::build_cogtree(&log, &space, TreeVariant::Standard)?
                    .concept_groups()
                    .len(),
            };
            tree::cluster_tree(&model.class_vectors(), &space, k)?
        }
        v => tree::build_cogtree(&log, &space, v)?,
    };
    let out = Out::new(out)?;
    out.tree(&tree)?;
    out.record_run("build-tree", &config, &text, &sha256_hex(digest_input.as_bytes()))?;
    print!("{}", describe(&tree));
    Ok(())
}

fn build_tree_from_data(config: ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let (config, text) = settings::finish(config)?;
    let data = experiment::load_data(&config)?;
    let biased = experiment::run_phase1(&config, &data)?;
    let tree = experiment::build_tree(config.tree.variant, config.tree.num_concepts, &data, &biased)?;
    let out = Out::new(out)?;
    write_prediction_log_csv(&biased.log, &data.space, &out.path("predictions.csv"))?;
    out.write(
        "biased/checkpoint.json",
        biased
            .outcome
            .model
            .to_checkpoint(config.phase1_seed(), sha256_hex(text.as_bytes()))
            .to_json(),
    )?;
    out.tree(&tree)?;
    out.record_run("build-tree", &config, &text, &data.digest)?;
    print!("{}", describe(&tree));
    Ok(())
}

fn tree_for(
    config: &ExperimentConfig,
    data: &LoadedData,
    tree_file: Option<&Path>,
) -> Result<Option<CogTree>, CliError> {
    if !config.phase2.loss.kind.needs_tree() {
        return Ok(None);
    }
    let tree = match tree_file {
        Some(path) => {
            let tree = CogTree::from_json(&read_text(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            check_space(&tree, &data.space)?;
            tree
        }
        None => {
            info!("no tree given; training a biased model to build one");
            let biased = experiment::run_phase1(config, data)?;
            experiment::build_tree(config.tree.variant, config.tree.num_concepts, data, &biased)?
        }
    };
    Ok(Some(tree))
}

fn train_one(
    config: ExperimentConfig,
    tree_file: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (config, text) = settings::finish(config)?;
    let data = experiment::load_data(&config)?;
    let tree = tree_for(&config, &data, tree_file)?;
    let outcome = experiment::run_phase2(&config, &config.phase2, &data, tree.as_ref())?;
    let out = Out::new(out)?;
    if let Some(tree) = &tree {
        out.tree(tree)?;
    }
    out.write(
        "checkpoint.json",
        outcome
            .model
            .to_checkpoint(config.phase2_seed(), sha256_hex(text.as_bytes()))
            .to_json(),
    )?;
    out.write("history.csv", history_csv(&outcome.history))?;
    out.record_run("train", &config, &text, &data.digest)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "{} loss, {} epochs: final mean loss {:.6}, train accuracy {:.4}",
            config.phase2.loss.kind,
            outcome.history.len(),
            last.mean_loss,
            last.train_accuracy
        );
    }
    Ok(())
}

fn eval(config: ExperimentConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<(), CliError> {
    let (config, text) = settings::finish(config)?;
    let data = experiment::load_data(&config)?;
    let model = read_checkpoint(checkpoint)?;
    if model.num_classes() != data.space.len() {
        return Err(CliError::Data(format!(
            "checkpoint has {} classes, data has {}",
            model.num_classes(),
            data.space.len()
        )));
    }
    let report = experiment::evaluate(&model, data.split(split), &data.space, &config.ks)?;
    let out = Out::new(out)?;
    out.metrics("", &report)?;
    let digest = sha256_hex(format!("{}{}", data.digest, read_text(checkpoint)?).as_bytes());
    out.record_run("eval", &config, &text, &digest)?;
    print!("{}", report.to_table());
    Ok(())
}

fn comparison(ks: &[usize], rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = format!("{:<20}", "model");
    for k in ks {
        let _ = write!(s, " {:>8}", format!("mR@{k}"));
    }
    for k in ks {
        let _ = write!(s, " {:>8}", format!("R@{k}"));
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(s, "{name:<20}");
        for v in r.mean_recall.iter().chain(&r.recall) {
            let _ = write!(s, " {v:>8.4}");
        }
        s.push('\n');
    }
    s
}

fn pipeline(
    config: ExperimentConfig,
    ablate: bool,
    lambda_sweep: bool,
    out: &Path,
) -> Result<(), CliError> {
    let (config, text) = settings::finish(config)?;
    let digest = sha256_hex(text.as_bytes());
    let data = experiment::load_data(&config)?;
    let input_digest = data.digest.clone();
    info!("phase 1: {} loss", config.phase1.loss.kind);
    let result = experiment::run_pipeline_on(&config, data)?;
    let out = Out::new(out)?;

    out.write(
        "biased/checkpoint.json",
        result
            .biased
            .outcome
            .model
            .to_checkpoint(config.phase1_seed(), digest.clone())
            .to_json(),
    )?;
    out.write("biased/history.csv", history_csv(&result.biased.outcome.history))?;
    out.metrics("biased/", &result.biased_metrics)?;
    write_prediction_log_csv(&result.biased.log, &result.data.space, &out.path("predictions.csv"))?;
    out.tree(&result.tree)?;
    out.write(
        "checkpoint.json",
        result
            .retrained
            .model
            .to_checkpoint(config.phase2_seed(), digest.clone())
            .to_json(),
    )?;
    out.write("history.csv", history_csv(&result.retrained.history))?;
    out.metrics("", &result.retrained_metrics)?;

    let phase2_name = config.phase2.loss.kind.to_string();
    let table = comparison(
        &config.ks,
        &[
            ("biased-ce", &result.biased_metrics),
            (phase2_name.as_str(), &result.retrained_metrics),
        ],
    );
    out.write("comparison.txt", &table)?;
    print!("{}", describe(&result.tree));
    print!("{table}");

    let mut entries = Vec::new();
    if ablate {
        entries.extend(experiment::ablation_grid(&config.phase2));
    }
    if lambda_sweep {
        entries.extend(experiment::lambda_grid(&config.phase2, &experiment::LAMBDA_GRID));
    }
    if !entries.is_empty() {
        info!("running {} ablation entries", entries.len());
        let results = experiment::run_ablation(&config, &result.data, &result.biased, &entries)?;
        let summary = experiment::summary_csv(&results, &config.ks);
        out.write("summary.csv", &summary)?;
        let rows: Vec<(&str, &MetricsReport)> = results
            .iter()
            .map(|r| (r.entry.name.as_str(), &r.metrics))
            .collect();
        print!("{}", comparison(&config.ks, &rows));
    }
    out.record_run("pipeline", &config, &text, &input_digest)?;
    Ok(())
}
