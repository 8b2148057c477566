use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "seed": 3,
  "dataset": {"classes": 3, "subjects": 4, "reps": 2, "frames": 12,
              "split": {"train": [0, 1], "val": [2], "test": [3]}},
  "preprocess": {"target_frames": 4, "target_points_per_frame": 3},
  "graph": {"k": 3},
  "encoder": {"layers": [[6], [6]]},
  "fusion": {"head": "tracking", "embed": [6], "classifier": [6],
             "attention_heads": 2, "attention_head_dim": 3, "hidden": [6]},
  "train": {"max_epochs": 2},
  "eval": {"trials": 2},
  "federated": {"participants": 2, "rounds": 2}
}"#;

fn sidesense(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidesense"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = sidesense(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn generate_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.json", "--output", "a", "generate"]);
    ok(d, &["--config", "tiny.json", "--output", "b", "generate"]);
    let a = read_json(&d.join("a/run.generate.json"));
    let b = read_json(&d.join("b/run.generate.json"));
    assert_eq!(a["summary"]["dataset_sha256"], b["summary"]["dataset_sha256"]);
    assert_eq!(a["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(a["seed"], 3);
    let c = read_json(&d.join("a/config.resolved.json"));
    assert_eq!(c["dataset"]["classes"], 3);
}

#[test]
fn full_pipeline() {
    let dir = setup();
    let d = dir.path();
    let base = ["--config", "tiny.json", "--output", "run"];
    let with = |extra: &[&'static str]| -> Vec<&str> { base.iter().chain(extra).copied().collect() };
    ok(d, &with(&["generate"]));
    ok(d, &with(&["preprocess"]));
    ok(d, &with(&["train"]));
    let run = d.join("run");
    assert!(run.join("model.json").is_file());
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    ok(d, &with(&["evaluate", "--angles", "0,45"]));
    let eval = read_json(&run.join("evaluation.json"));
    assert_eq!(eval["angles"], serde_json::json!([0, 45]));
    assert!(eval["report"]["balanced_accuracy"].is_number());

    ok(d, &with(&["dropout"]));
    let dropout = fs::read_to_string(run.join("dropout.csv")).unwrap();
    assert!(dropout.starts_with("protocol,setting,trial,balanced_accuracy,auc\n"));
    // 8 settings x 2 trials
    assert_eq!(dropout.lines().count(), 1 + 16);

    ok(d, &with(&["pairs"]));
    assert_eq!(fs::read_to_string(run.join("pairs.csv")).unwrap().lines().count(), 5);
    ok(d, &with(&["permute"]));
    ok(d, &with(&["importance"]));
    let imp = fs::read_to_string(run.join("importance.csv")).unwrap();
    assert!(imp.starts_with("gesture,class,angle_deg,importance\n"));
    assert_eq!(imp.lines().count(), 1 + 3 * 8);

    ok(d, &with(&["federate"]));
    assert!(run.join("model.federated.json").is_file());
    ok(d, &with(&["simulate", "--corrupt", "run/dataset"]));
    let sim = read_json(&run.join("run.simulate.json"));
    assert_eq!(sim["summary"]["conservation_violations"], 0);
    assert_eq!(sim["summary"]["illegal_transitions"], 0);
    assert!(run.join("corrupted/manifest.json").is_file());
    for cmd in ["generate", "preprocess", "train", "evaluate", "dropout", "pairs", "permute", "importance", "federate", "simulate"] {
        assert!(run.join(format!("run.{cmd}.json")).is_file(), "{cmd}");
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.json", "--output", "a", "--dataset.reps", "1", "generate"]);
    ok(d, &["--config", "a/config.resolved.json", "--output", "a", "generate"]);
    let first = read_json(&d.join("a/run.generate.json"));
    ok(d, &["--config", "tiny.json", "--output", "b", "--dataset.reps=1", "generate"]);
    let second = read_json(&d.join("b/run.generate.json"));
    assert_eq!(first["summary"]["dataset_sha256"], second["summary"]["dataset_sha256"]);
    assert_eq!(first["summary"]["samples"], 12);
}

#[test]
fn empty_dataset_names_the_manifest() {
    let dir = setup();
    let d = dir.path();
    fs::create_dir(d.join("empty")).unwrap();
    let out = sidesense(d, &["--config", "tiny.json", "--output", "o", "train", "--data", "empty"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("manifest.json"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = setup();
    let d = dir.path();
    let unknown = sidesense(d, &["--config", "tiny.json", "--output", "o", "--train.patiance", "3", "generate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("train.patiance"));
    fs::write(d.join("bad.json"), r#"{"fusion": {"heads": 2}}"#).unwrap();
    assert_eq!(sidesense(d, &["--config", "bad.json", "generate"]).status.code(), Some(2));
    assert_eq!(sidesense(d, &["--config", "missing.json", "generate"]).status.code(), Some(2));
    assert_eq!(sidesense(d, &["--config", "tiny.json", "frobnicate"]).status.code(), Some(2));
    let invalid = sidesense(d, &["--config", "tiny.json", "--output", "o", "--train.lr_init", "-1", "generate"]);
    assert_eq!(invalid.status.code(), Some(2));
}

#[test]
fn tracking_only_protocols_reject_other_heads() {
    let dir = setup();
    let d = dir.path();
    let base = ["--config", "tiny.json", "--output", "run", "--fusion.head", "max"];
    for cmd in ["generate", "preprocess", "train"] {
        ok(d, &[&base[..], &[cmd]].concat());
    }
    let out = sidesense(d, &[&base[..], &["permute"]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tracking"));
}

#[test]
fn help_documents_overrides() {
    let dir = setup();
    let out = ok(dir.path(), &["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("--train.patience"));
    assert!(text.contains("Exit codes"));
    for cmd in ["generate", "preprocess", "train", "evaluate", "dropout", "pairs", "permute", "importance", "federate", "simulate"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
