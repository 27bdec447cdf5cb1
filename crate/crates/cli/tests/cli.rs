use std::fs;
use std::path::Path;

use assert_cmd::Command;
use cogtree::experiment::ExperimentConfig;
use cogtree::model::{Architecture, Checkpoint, Classifier};
use cogtree::tree::{CogTree, NodeKind};
use cogtree::Seed;
use tempfile::TempDir;

const TINY: &str = r#"
seed = 11
ks = [1, 2]

[data]
source = "synthetic"
num_concepts = 2
fine_per_concept = 2
head_count = 60
tail_count = 8
dim = 4

[phase1]
epochs = 4

[phase2]
epochs = 4
"#;

fn cogtree() -> Command {
    Command::cargo_bin("cogtree").unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn no_temp_files(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        assert!(!name.ends_with(".tmp"), "left behind {name}");
        if entry.file_type().unwrap().is_dir() {
            no_temp_files(&entry.path());
        }
    }
}

#[test]
fn gen_data_writes_three_splits_reproducibly() {
    let tmp = TempDir::new().unwrap();
    for run in ["a", "b"] {
        cogtree()
            .args(["gen-data", "--out"])
            .arg(tmp.path().join(run))
            .assert()
            .success();
    }
    for file in ["train.csv", "val.csv", "test.csv", "labels.csv", "config.toml", "manifest.json"] {
        assert_eq!(read(tmp.path().join("a").join(file)), read(tmp.path().join("b").join(file)), "{file}");
    }
    let labels = String::from_utf8(read(tmp.path().join("a/labels.csv"))).unwrap();
    assert_eq!(labels.lines().count(), 31);
    no_temp_files(tmp.path());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    cogtree()
        .args(["gen-data", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .assert()
        .success();
    let text = String::from_utf8(read(tmp.path().join("o/config.toml"))).unwrap();
    let echoed: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(echoed.seed, Seed(99));
    assert_eq!(echoed.ks, vec![1, 2]);
}

#[test]
fn bad_spec_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[data]\nsource = \"synthetic\"\nfine_offset = 9.0\n").unwrap();
    let run = cogtree()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .assert()
        .code(2);
    assert!(String::from_utf8_lossy(&run.get_output().stderr).contains("fine_offset"));
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    cogtree()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .assert()
        .code(2);
}

#[test]
fn missing_inputs_exit_with_data_code() {
    let tmp = TempDir::new().unwrap();
    cogtree()
        .args(["build-tree", "--log", "/no/such/log.csv", "--labels", "/no/such/labels.csv"])
        .arg("--out")
        .arg(tmp.path())
        .assert()
        .code(3);
    cogtree()
        .args(["pipeline", "--data-dir", "/no/such/dir", "--out"])
        .arg(tmp.path())
        .assert()
        .code(3);
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    for run in ["a", "b"] {
        cogtree()
            .args(["pipeline", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(run))
            .assert()
            .success();
    }
    for file in [
        "config.toml",
        "manifest.json",
        "tree.json",
        "tree.dot",
        "checkpoint.json",
        "metrics.json",
        "metrics.txt",
        "comparison.txt",
        "predictions.csv",
        "biased/checkpoint.json",
        "biased/metrics.json",
    ] {
        assert_eq!(read(tmp.path().join("a").join(file)), read(tmp.path().join("b").join(file)), "{file}");
    }
    no_temp_files(tmp.path());
}

#[test]
fn pipeline_ablation_writes_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    cogtree()
        .args(["pipeline", "--ablate", "--lambda-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .assert()
        .success();
    let summary = String::from_utf8(read(tmp.path().join("summary.csv"))).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,loss,tree,aggregator,lambda,resample,mR@1,mR@2,R@1,R@2"
    );
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names.len(), 12 + 5);
    for want in ["ce", "cb", "tce", "tcb", "cogtree", "fuse_layer", "fuse_subtree", "cluster_tree", "cogtree_max", "cogtree_sum"] {
        assert!(names.contains(&want), "{want}");
    }
}

#[test]
fn flat_variant_gives_single_level_tree() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    cogtree()
        .args(["build-tree", "--variant", "flat", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .assert()
        .success();
    let tree = CogTree::from_json(&fs::read_to_string(tmp.path().join("tree.json")).unwrap()).unwrap();
    let root = &tree.nodes()[0];
    assert_eq!(root.children.len(), tree.num_classes());
    assert!(tree.nodes()[1..].iter().all(|n| n.kind == NodeKind::ConceptLeaf));
    assert!(fs::read_to_string(tmp.path().join("tree.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn build_tree_from_log_matches_pipeline_tree() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    cogtree().args(["pipeline", "--config"]).arg(&cfg).arg("--out").arg(&run).assert().success();
    let data = tmp.path().join("data");
    cogtree().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(&data).assert().success();
    let out = tmp.path().join("tree");
    cogtree()
        .args(["build-tree", "--log"])
        .arg(run.join("predictions.csv"))
        .arg("--labels")
        .arg(data.join("labels.csv"))
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let a = CogTree::from_json(&fs::read_to_string(run.join("tree.json")).unwrap()).unwrap();
    let b = CogTree::from_json(&fs::read_to_string(out.join("tree.json")).unwrap()).unwrap();
    assert_eq!(a.nodes(), b.nodes());
}

#[test]
fn zero_learning_rate_leaves_initial_weights() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    cogtree()
        .args(["train", "--loss", "ce", "--lr", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .assert()
        .success();
    let ck = Checkpoint::from_json(&fs::read_to_string(tmp.path().join("checkpoint.json")).unwrap()).unwrap();
    let trained = Classifier::from_checkpoint(&ck).unwrap();
    let config: ExperimentConfig = toml::from_str(TINY).unwrap();
    let init = Classifier::init(Architecture::Linear, 4, 6, config.resolved().phase2_seed());
    assert_eq!(trained, init);
    let history = fs::read_to_string(tmp.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
}

#[test]
fn tree_loss_with_default_hyperparameters_trains() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    cogtree()
        .args(["train", "--loss", "cogtree", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .assert()
        .success();
    let text = fs::read_to_string(tmp.path().join("config.toml")).unwrap();
    let echoed: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(echoed.phase2.loss.lambda, 1.0);
    assert_eq!(echoed.phase2.loss.beta, 0.999);
    assert!(tmp.path().join("tree.json").exists());
}

#[test]
fn eval_of_perfect_model_reports_full_recall() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let rows = "label,f0,f1,f2\na,1,0,0\nb,0,1,0\nc,0,0,1\na,2,0,0\n";
    for split in ["train", "val", "test"] {
        fs::write(data.join(format!("{split}.csv")), rows).unwrap();
    }
    fs::write(data.join("labels.csv"), "name,count\na,2\nb,1\nc,1\n").unwrap();
    let mut model = Classifier::zeros(Architecture::Linear, 3, 3);
    model
        .set_params(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        .unwrap();
    let ck = tmp.path().join("ck.json");
    fs::write(&ck, model.to_checkpoint(Seed(0), "fixture").to_json()).unwrap();
    let out = tmp.path().join("eval");
    cogtree()
        .args(["eval", "--ks", "1,2", "--data-dir"])
        .arg(&data)
        .arg("--checkpoint")
        .arg(&ck)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["mean_recall"][0], 1.0);
    assert_eq!(metrics["recall"][0], 1.0);
    assert!(out.join("metrics.txt").exists());
    cogtree()
        .args(["eval", "--data-dir"])
        .arg(&data)
        .arg("--checkpoint")
        .arg(&ck)
        .arg("--out")
        .arg(&out)
        .assert()
        .code(2);
}
