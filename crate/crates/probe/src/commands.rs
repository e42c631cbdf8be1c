//! The four CLI subcommands as library functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use probe_core::explain::Method;
use probe_core::explanation::{Explanation, ExplanationRecord};
use probe_core::gnn::checkpoint::Checkpoint;
use probe_core::gnn::train::accuracy;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::pipeline::{self, Artifacts, Model64};
use crate::report::{write_report_files, ReliabilityReport, ReportFormat};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EXPLANATION_DIR: &str = "explanations";
pub const SKIPPED_FILE: &str = "skipped.csv";
pub const REPORT_FILE: &str = "report.json";
pub const RUN_LOG_FILE: &str = "run_log.json";

pub fn explanation_file(node: usize, method: Method) -> String {
    format!("node{node}_{}.json", method.tag())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: Option<f64>,
}

/// Trains from the configured seed and writes the checkpoint and loss log.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary, HarnessError> {
    std::fs::create_dir_all(out)?;
    let graph = pipeline::load_dataset(cfg)?;
    let outcome = pipeline::train_model(cfg, &graph)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    Checkpoint::from_model(&outcome.model, cfg.model.seed, &cfg.train).save(&checkpoint)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(log, "{i},{l:?}");
    }
    std::fs::write(out.join(TRAIN_LOG_FILE), log)?;
    let summary = TrainSummary {
        checkpoint,
        train_accuracy: accuracy(&outcome.model, &graph, &graph.train_nodes())?,
        test_accuracy: accuracy(&outcome.model, &graph, &graph.test_nodes())?,
        final_loss: outcome.losses.last().copied(),
    };
    info!("train accuracy {:.4}, test accuracy {:.4}", summary.train_accuracy, summary.test_accuracy);
    Ok(summary)
}

pub fn load_checkpoint(path: &Path) -> Result<Model64, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingArtifact(format!("checkpoint {}", path.display())));
    }
    Ok(Checkpoint::load(path)?.to_model()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainSummary {
    pub written: Vec<PathBuf>,
    /// `(node, method, reason)`
    pub skipped: Vec<(usize, String, String)>,
}

/// Writes one JSON per (node, method) and a `skipped.csv` with one warning
/// row per explanation that could not be produced.
pub fn cmd_explain(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, nodes: Option<&[usize]>) -> Result<ExplainSummary, HarnessError> {
    let graph = pipeline::load_dataset(cfg)?;
    let model = load_checkpoint(checkpoint)?;
    pipeline::check_model(cfg, &graph, &model)?;
    let nodes = pipeline::evaluation_nodes(cfg, &graph, nodes)?;
    let trained = pipeline::fit_explainers(cfg, &graph, &model)?;
    let results = pipeline::explain_nodes(cfg, &graph, &model, &trained, &nodes)?;
    let dir = out.join(EXPLANATION_DIR);
    std::fs::create_dir_all(&dir)?;
    let mut summary = ExplainSummary {
        written: Vec::new(),
        skipped: Vec::new(),
    };
    let mut skipped_csv = String::from("node,method,reason\n");
    for (u, m, res) in results {
        match res {
            Ok(e) => {
                let path = dir.join(explanation_file(u, m));
                let mut text = serde_json::to_string_pretty(&ExplanationRecord::from(&e))?;
                text.push('\n');
                std::fs::write(&path, text)?;
                summary.written.push(path);
            }
            Err(reason) => {
                warn!("node {u} {m}: skipped: {reason}");
                let _ = writeln!(skipped_csv, "{u},{},\"{}\"", m.tag(), reason.replace('"', "'"));
                summary.skipped.push((u, m.tag().to_string(), reason));
            }
        }
    }
    std::fs::write(dir.join(SKIPPED_FILE), skipped_csv)?;
    Ok(summary)
}

/// Loads saved explanations for `nodes × methods`. A missing file is an error
/// unless `skipped.csv` lists it.
pub fn load_explanations(dir: &Path, nodes: &[usize], methods: &[Method]) -> Result<BTreeMap<(usize, Method), Explanation<f64>>, HarnessError> {
    let skipped_path = dir.join(SKIPPED_FILE);
    let skipped = std::fs::read_to_string(&skipped_path).unwrap_or_default();
    let is_skipped = |u: usize, m: Method| {
        let prefix = format!("{u},{},", m.tag());
        skipped.lines().any(|l| l.starts_with(&prefix))
    };
    let mut out = BTreeMap::new();
    for &u in nodes {
        for &m in methods {
            let path = dir.join(explanation_file(u, m));
            if path.exists() {
                let record: ExplanationRecord = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                if record.node != u || record.method != m.tag() {
                    return Err(HarnessError::MissingArtifact(format!("{} describes another cell", path.display())));
                }
                out.insert((u, m), record.to_explanation()?);
            } else if !is_skipped(u, m) {
                return Err(HarnessError::MissingArtifact(format!("explanation {}", path.display())));
            }
        }
    }
    Ok(out)
}

/// Runs the evaluation and writes `report.json`, `verification.csv` and a
/// separate timing log (kept out of the report so it stays byte-stable).
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    explanations: Option<&Path>,
    out: &Path,
    nodes: Option<&[usize]>,
) -> Result<ReliabilityReport, HarnessError> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let graph = pipeline::load_dataset(cfg)?;
    let model = load_checkpoint(checkpoint)?;
    pipeline::check_model(cfg, &graph, &model)?;
    let nodes = pipeline::evaluation_nodes(cfg, &graph, nodes)?;
    let provided = match explanations {
        Some(dir) => Some(load_explanations(dir, &nodes, &cfg.methods)?),
        None => None,
    };
    let t_fit = Instant::now();
    let trained = pipeline::fit_explainers(cfg, &graph, &model)?;
    let fit_seconds = t_fit.elapsed().as_secs_f64();
    let t_eval = Instant::now();
    let report = pipeline::evaluate(
        cfg,
        &Artifacts {
            graph: &graph,
            model: &model,
            trained: &trained,
            provided: provided.as_ref(),
        },
        &nodes,
    )?;
    let eval_seconds = t_eval.elapsed().as_secs_f64();
    std::fs::write(out.join(REPORT_FILE), report.to_json()?)?;
    std::fs::write(out.join("verification.csv"), report.verification_csv())?;
    let log = serde_json::json!({
        "fit_explainers_seconds": fit_seconds,
        "evaluate_seconds": eval_seconds,
        "total_seconds": start.elapsed().as_secs_f64(),
        "workers": cfg.workers,
    });
    std::fs::write(out.join(RUN_LOG_FILE), serde_json::to_string_pretty(&log)? + "\n")?;
    info!("{} violation(s) across {} verification records", report.violation_count(), report.verification.len());
    Ok(report)
}

/// Renders a saved report as tables and plot series.
pub fn cmd_report(report_path: &Path, out: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    if !report_path.exists() {
        return Err(HarnessError::MissingArtifact(format!("report {}", report_path.display())));
    }
    let report = ReliabilityReport::from_json(&std::fs::read_to_string(report_path)?)?;
    write_report_files(&report, out, format)
}
