//! The reliability report: per-cell rows, verification records, aggregates,
//! correlations, and their CSV/JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use probe_core::bounds::{verify, BoundValue, Theorem, VerificationRecord, VERIFICATION_CSV_HEADER};
use probe_core::metrics::{pearson, spearman};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Empirical metrics reported per (node, method), in table order.
pub const TABLE_METRICS: [&str; 4] = ["unfaithfulness", "instability", "cf_mismatch", "group_fairness_mismatch"];

/// Pairwise bound checks of one theorem within one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub theorem: Theorem,
    pub metric: String,
    pub pairs: usize,
    pub violations: usize,
    /// The pair with the smallest slack.
    pub worst: VerificationRecord,
    pub worst_bound: BoundValue,
}

/// Everything measured for one (node, method) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub node: usize,
    pub method: String,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckSummary>,
    /// Side values that are neither metrics nor bounds.
    pub diagnostics: BTreeMap<String, f64>,
    /// Metric or check name to the reason it is missing.
    pub skipped: BTreeMap<String, String>,
}

impl CellRow {
    pub fn new(node: usize, method: &str) -> Self {
        Self {
            node,
            method: method.to_string(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            diagnostics: BTreeMap::new(),
            skipped: BTreeMap::new(),
        }
    }

    /// Verifies every `(metric, bound)` pair and keeps the tightest one.
    pub fn add_check(&mut self, theorem: Theorem, metric: &str, pairs: Vec<(f64, BoundValue)>, tol: f64) {
        if pairs.is_empty() {
            self.skipped.insert(format!("{metric}:{theorem}"), "no pairs to check".into());
            return;
        }
        let mut violations = 0;
        let mut worst: Option<(VerificationRecord, BoundValue)> = None;
        let count = pairs.len();
        for (value, bound) in pairs {
            let rec = verify(self.node, &self.method, metric, theorem, value, bound.value, tol);
            violations += rec.violated as usize;
            if worst.as_ref().is_none_or(|(w, _)| rec.slack < w.slack) {
                worst = Some((rec, bound));
            }
        }
        let (worst, worst_bound) = worst.expect("at least one pair");
        self.checks.push(CheckSummary {
            theorem,
            metric: metric.to_string(),
            pairs: count,
            violations,
            worst,
            worst_bound,
        });
    }

    pub fn check(&self, theorem: Theorem) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.theorem == theorem)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `√n`; 0 when `n < 2`.
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `across_methods`, `bound_vs_empirical` or `ranking`.
    pub scope: String,
    pub x: String,
    pub y: String,
    pub n: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremTally {
    pub theorem: Theorem,
    pub cells: usize,
    pub pairs: usize,
    pub violations: usize,
    pub min_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub seed: u64,
    pub model_seed: u64,
    pub nodes: Vec<usize>,
    pub methods: Vec<String>,
    pub p: f64,
    pub k: usize,
    pub tol: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub gamma11: f64,
    pub gamma12: f64,
    pub pool_size: usize,
    /// Nodes excluded entirely, with the reason.
    pub skipped_nodes: BTreeMap<usize, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub metadata: RunMetadata,
    pub rows: Vec<CellRow>,
    pub verification: Vec<VerificationRecord>,
    pub tallies: Vec<TheoremTally>,
    pub aggregates: Vec<Aggregate>,
    pub correlations: Vec<Correlation>,
}

pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn correlation(scope: &str, x: &str, y: &str, xs: &[f64], ys: &[f64]) -> Correlation {
    let (p, s) = (pearson(xs, ys), spearman(xs, ys));
    let note = match (&p, &s) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    Correlation {
        scope: scope.to_string(),
        x: x.to_string(),
        y: y.to_string(),
        n: xs.len(),
        pearson: p.ok(),
        spearman: s.ok(),
        note,
    }
}

impl ReliabilityReport {
    /// Builds verification list, tallies, aggregates and correlations from
    /// the rows. Row order must already be fixed.
    pub fn assemble(metadata: RunMetadata, rows: Vec<CellRow>) -> Self {
        let verification: Vec<VerificationRecord> = rows.iter().flat_map(|r| r.checks.iter().map(|c| c.worst.clone())).collect();

        let mut tallies: BTreeMap<Theorem, TheoremTally> = BTreeMap::new();
        for c in rows.iter().flat_map(|r| &r.checks) {
            let t = tallies.entry(c.theorem).or_insert(TheoremTally {
                theorem: c.theorem,
                cells: 0,
                pairs: 0,
                violations: 0,
                min_slack: f64::INFINITY,
            });
            t.cells += 1;
            t.pairs += c.pairs;
            t.violations += c.violations;
            t.min_slack = t.min_slack.min(c.worst.slack);
        }

        let methods = &metadata.methods;
        let mut aggregates = Vec::new();
        for m in methods {
            for metric in TABLE_METRICS {
                let xs: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.method == m)
                    .filter_map(|r| r.metrics.get(metric).copied())
                    .collect();
                let (mean, std_error) = mean_and_std_error(&xs);
                aggregates.push(Aggregate {
                    method: m.clone(),
                    metric: metric.to_string(),
                    n: xs.len(),
                    mean,
                    std_error,
                });
            }
        }

        let mut correlations = Vec::new();
        // method-level means of each pair of metrics
        for (i, a) in TABLE_METRICS.iter().enumerate() {
            for b in &TABLE_METRICS[i + 1..] {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for m in methods {
                    let get = |metric: &str| aggregates.iter().find(|g| &g.method == m && g.metric == metric && g.n > 0).map(|g| g.mean);
                    if let (Some(x), Some(y)) = (get(a), get(b)) {
                        xs.push(x);
                        ys.push(y);
                    }
                }
                correlations.push(correlation("across_methods", a, b, &xs, &ys));
            }
        }
        // pooled cells: tightest bound against its empirical value
        for t in tallies.keys() {
            let (xs, ys): (Vec<f64>, Vec<f64>) = verification
                .iter()
                .filter(|v| v.theorem == *t)
                .map(|v| (v.bound_value, v.metric_value))
                .unzip();
            correlations.push(correlation("bound_vs_empirical", &format!("{t}_bound"), &format!("{t}_metric"), &xs, &ys));
        }
        // method ranking by mean faithfulness bound against mean unfaithfulness
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for m in methods {
            let bounds: Vec<f64> = rows
                .iter()
                .filter(|r| &r.method == m)
                .filter_map(|r| r.checks.iter().find(|c| c.metric == "unfaithfulness").map(|c| c.worst.bound_value))
                .collect();
            let emp = aggregates.iter().find(|g| &g.method == m && g.metric == "unfaithfulness");
            if let (false, Some(g)) = (bounds.is_empty(), emp) {
                xs.push(mean_and_std_error(&bounds).0);
                ys.push(g.mean);
            }
        }
        correlations.push(correlation("ranking", "mean_faithfulness_bound", "mean_unfaithfulness", &xs, &ys));

        Self {
            metadata,
            verification,
            tallies: tallies.into_values().collect(),
            aggregates,
            correlations,
            rows,
        }
    }

    pub fn violation_count(&self) -> usize {
        self.tallies.iter().map(|t| t.violations).sum()
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn verification_csv(&self) -> String {
        let mut out = String::from(VERIFICATION_CSV_HEADER);
        out.push('\n');
        for v in &self.verification {
            out.push_str(&v.csv_row());
            out.push('\n');
        }
        out
    }

    /// One row per (method, metric).
    pub fn table_csv(&self) -> String {
        let mut out = String::from("method,metric,n,mean,std_error\n");
        for a in &self.aggregates {
            let _ = writeln!(out, "{},{},{},{:?},{:?}", a.method, a.metric, a.n, a.mean, a.std_error);
        }
        out
    }

    /// Per-node unfaithfulness with its bound and the worst-case comparator.
    pub fn series_csv(&self, method: &str) -> String {
        let mut out = String::from("node,unfaithfulness,faithfulness_bound,worst_case_gap\n");
        for r in self.rows.iter().filter(|r| r.method == method) {
            let (Some(&m), Some(c)) = (r.metrics.get("unfaithfulness"), r.checks.iter().find(|c| c.metric == "unfaithfulness")) else {
                continue;
            };
            let wc = r.diagnostics.get("worst_case_gap").copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{:?},{:?},{:?}", r.node, m, c.worst.bound_value, wc);
        }
        out
    }

    /// Recomputes every aggregate from the rows; returns the largest
    /// absolute difference.
    pub fn aggregate_drift(&self) -> f64 {
        let mut drift: f64 = 0.0;
        for a in &self.aggregates {
            let xs: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.method == a.method)
                .filter_map(|r| r.metrics.get(&a.metric).copied())
                .collect();
            let (mean, se) = mean_and_std_error(&xs);
            drift = drift.max((mean - a.mean).abs()).max((se - a.std_error).abs());
        }
        drift
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(HarnessError::Config(format!("unknown format {other:?}; valid formats: csv, json"))),
        }
    }
}

/// Writes the table, verification records and per-method series; returns
/// the written paths in order.
pub fn write_report_files(report: &ReliabilityReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir.join("series"))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<(), HarnessError> {
        std::fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            put(dir.join("table.csv"), report.table_csv())?;
            put(dir.join("verification.csv"), report.verification_csv())?;
            for m in &report.metadata.methods {
                put(dir.join("series").join(format!("{m}.csv")), report.series_csv(m))?;
            }
        }
        ReportFormat::Json => {
            let mut table = serde_json::to_string_pretty(&report.aggregates)?;
            table.push('\n');
            put(dir.join("table.json"), table)?;
            let mut ver = serde_json::to_string_pretty(&report.verification)?;
            ver.push('\n');
            put(dir.join("verification.json"), ver)?;
            for m in &report.metadata.methods {
                let points: Vec<serde_json::Value> = report
                    .rows
                    .iter()
                    .filter(|r| &r.method == m)
                    .filter_map(|r| {
                        let c = r.checks.iter().find(|c| c.metric == "unfaithfulness")?;
                        Some(serde_json::json!({
                            "node": r.node,
                            "unfaithfulness": r.metrics.get("unfaithfulness")?,
                            "faithfulness_bound": c.worst.bound_value,
                            "worst_case_gap": r.diagnostics.get("worst_case_gap"),
                        }))
                    })
                    .collect();
                let mut text = serde_json::to_string_pretty(&points)?;
                text.push('\n');
                put(dir.join("series").join(format!("{m}.json")), text)?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(value: f64) -> BoundValue {
        BoundValue {
            theorem: Theorem::T2,
            value,
            inputs_digest: String::new(),
            worst_case: None,
        }
    }

    #[test]
    fn standard_error_uses_sample_deviation() {
        let (m, se) = mean_and_std_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_and_std_error(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn check_keeps_tightest_pair() {
        let mut row = CellRow::new(3, "vanilla_grad");
        row.add_check(Theorem::T2, "gradient_difference", vec![(0.1, bv(0.5)), (0.4, bv(0.45)), (0.2, bv(0.1))], 1e-9);
        let c = &row.checks[0];
        assert_eq!((c.pairs, c.violations), (3, 1));
        assert_eq!(c.worst.metric_value, 0.2);
        assert!(c.worst.violated);
    }

    fn sample_report() -> ReliabilityReport {
        let mut rows = Vec::new();
        for (node, u) in [(0usize, 0.1), (1, 0.3)] {
            for (method, scale) in [("full_mask", 0.0), ("vanilla_grad", 1.0)] {
                let mut r = CellRow::new(node, method);
                r.metrics.insert("unfaithfulness".into(), u * scale);
                r.metrics.insert("instability".into(), 0.5 * scale);
                r.add_check(Theorem::T1Node, "unfaithfulness", vec![(u * scale, bv(1.0 + u))], 1e-9);
                r.diagnostics.insert("worst_case_gap".into(), 0.2);
                rows.push(r);
            }
        }
        let meta = RunMetadata {
            version: "0".into(),
            seed: 1,
            model_seed: 1,
            nodes: vec![0, 1],
            methods: vec!["full_mask".into(), "vanilla_grad".into()],
            p: 0.25,
            k: 10,
            tol: 1e-9,
            train_accuracy: 1.0,
            test_accuracy: 1.0,
            gamma11: 1.0,
            gamma12: 1.0,
            pool_size: 0,
            skipped_nodes: BTreeMap::new(),
        };
        ReliabilityReport::assemble(meta, rows)
    }

    #[test]
    fn table_has_methods_times_metrics_rows() {
        let r = sample_report();
        assert_eq!(r.table_csv().lines().count(), 1 + 2 * TABLE_METRICS.len());
        let full = r.aggregates.iter().find(|a| a.method == "full_mask" && a.metric == "unfaithfulness").unwrap();
        assert_eq!((full.mean, full.std_error), (0.0, 0.0));
        assert_eq!(r.aggregate_drift(), 0.0);
    }

    #[test]
    fn series_length_matches_nodes() {
        let r = sample_report();
        assert_eq!(r.series_csv("vanilla_grad").lines().count(), 1 + 2);
    }

    #[test]
    fn json_round_trip_is_stable() {
        let r = sample_report();
        let text = r.to_json().unwrap();
        let back = ReliabilityReport::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(r.verification_csv().lines().next().unwrap(), VERIFICATION_CSV_HEADER);
    }
}
