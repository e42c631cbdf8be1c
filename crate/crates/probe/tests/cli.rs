//! End-to-end checks of the `probe` binary and its library commands on a
//! small configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use probe::commands::{self, load_checkpoint, CHECKPOINT_FILE, EXPLANATION_DIR, REPORT_FILE, SKIPPED_FILE};
use probe::pipeline::{init_model, load_dataset};
use probe::{ExperimentConfig, HarnessError};

const SMALL_CONFIG: &str = r#"{
  "dataset": { "synthetic": { "n_per_class": 30, "feature_dim": 5, "seed": 3 } },
  "train": { "epochs": 150, "learning_rate": 0.01 },
  "k": 4,
  "selection": { "max_nodes": 3, "max_pool_nodes": 6 },
  "workers": 1
}"#;

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(SMALL_CONFIG).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn probe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probe")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cli_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL_CONFIG);
    let out = tmp.path().join("run");
    let common = ["--config", s(&cfg_path), "--out", s(&out)];

    let train = probe(&[&["train"], &common[..]].concat());
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(out.join(CHECKPOINT_FILE).exists());
    assert!(out.join("train_log.csv").exists());

    let explain = probe(&[&["explain"], &common[..]].concat());
    assert_eq!(explain.status.code(), Some(0), "{}", String::from_utf8_lossy(&explain.stderr));
    let dir = out.join(EXPLANATION_DIR);
    let json_files = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    let skipped = std::fs::read_to_string(dir.join(SKIPPED_FILE)).unwrap().lines().count() - 1;
    assert_eq!(json_files + skipped, 3 * 9);

    let evaluate = probe(&[&["evaluate"], &common[..]].concat());
    assert_eq!(evaluate.status.code(), Some(0), "{}", String::from_utf8_lossy(&evaluate.stderr));
    assert!(String::from_utf8_lossy(&evaluate.stdout).contains("T1_node"));
    assert!(out.join(REPORT_FILE).exists());

    for (format, table) in [("csv", "table.csv"), ("json", "table.json")] {
        let report = probe(&["report", "--out", s(&out), "--format", format]);
        assert_eq!(report.status.code(), Some(0), "{}", String::from_utf8_lossy(&report.stderr));
        assert!(out.join(table).exists(), "{table} missing");
    }
    let header = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("method"));
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(probe(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(probe(&["train"]).status.code(), Some(2));
    let bad = write_config(tmp.path(), r#"{ "p": 0.25, "unknown_key": 1 }"#);
    assert_eq!(probe(&["train", "--config", s(&bad)]).status.code(), Some(2));
    let invalid = write_config(tmp.path(), r#"{ "p": 1.5 }"#);
    assert_eq!(probe(&["train", "--config", s(&invalid)]).status.code(), Some(2));

    let good = write_config(tmp.path(), SMALL_CONFIG);
    let out = tmp.path().join("empty");
    let missing = probe(&["evaluate", "--config", s(&good), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing artifact"));
    assert_eq!(probe(&["report", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(probe(&["report", "--out", s(&out), "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.epochs = 0;
    let summary = commands::cmd_train(&cfg, tmp.path()).unwrap();
    let graph = load_dataset(&cfg).unwrap();
    assert_eq!(load_checkpoint(&summary.checkpoint).unwrap(), init_model(&cfg, &graph).unwrap());
    assert_eq!(summary.final_loss, None);
}

#[test]
fn saved_explanations_reproduce_the_direct_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let checkpoint = commands::cmd_train(&cfg, tmp.path()).unwrap().checkpoint;
    let direct = commands::cmd_evaluate(&cfg, &checkpoint, None, &tmp.path().join("direct"), None).unwrap();
    commands::cmd_explain(&cfg, &checkpoint, tmp.path(), None).unwrap();
    let dir = tmp.path().join(EXPLANATION_DIR);
    let saved = commands::cmd_evaluate(&cfg, &checkpoint, Some(&dir), &tmp.path().join("saved"), None).unwrap();
    assert_eq!(direct.to_json().unwrap(), saved.to_json().unwrap());

    let victim = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("node"))
        .unwrap();
    std::fs::remove_file(victim).unwrap();
    let err = commands::cmd_evaluate(&cfg, &checkpoint, Some(&dir), &tmp.path().join("broken"), None).unwrap_err();
    assert!(matches!(err, HarnessError::MissingArtifact(_)), "{err}");
}

#[test]
fn explicit_node_list_restricts_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let checkpoint = commands::cmd_train(&cfg, tmp.path()).unwrap().checkpoint;
    let graph = load_dataset(&cfg).unwrap();
    let node = graph.test_nodes()[1];
    let report = commands::cmd_evaluate(&cfg, &checkpoint, None, tmp.path(), Some(&[node])).unwrap();
    assert_eq!(report.metadata.nodes, vec![node]);
    assert!(report.rows.iter().all(|r| r.node == node));
}
