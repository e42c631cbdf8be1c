//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use probe_core::explain::{ExplainerSettings, Method};
use probe_core::gnn::train::TrainConfig;
use probe_core::graph::{CsvDataset, SplitSpec, SyntheticSpec};
use probe_core::perturb::PerturbationConfig;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Csv(CsvDataset),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 16,
            seed: 1,
        }
    }
}

/// Which metric families (each with its bounds) are computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub unfaithfulness: bool,
    pub instability: bool,
    pub counterfactual: bool,
    pub group_fairness: bool,
    pub bounds: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            unfaithfulness: true,
            instability: true,
            counterfactual: true,
            group_fairness: true,
            bounds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSelection {
    /// Explicit node ids; when absent the first `max_nodes` test nodes are used.
    pub nodes: Option<Vec<usize>>,
    pub max_nodes: usize,
    /// Test nodes whose perturbation sets form the group-fairness pool; all
    /// test nodes when absent.
    pub max_pool_nodes: Option<usize>,
}

impl Default for NodeSelection {
    fn default() -> Self {
        Self {
            nodes: None,
            max_nodes: 50,
            max_pool_nodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub explainers: ExplainerSettings,
    /// Top-p fraction kept by every mask.
    pub p: f64,
    /// Perturbations per node; `|K| = k + 1`.
    pub k: usize,
    pub perturbation: PerturbationConfig,
    pub metrics: MetricToggles,
    pub selection: NodeSelection,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Absolute tolerance of the bound verifier.
    pub tol: f64,
    /// Ridge added to per-feature Gram matrices before inversion.
    pub gram_ridge: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            explainers: ExplainerSettings::default(),
            p: 0.25,
            k: 10,
            perturbation: PerturbationConfig::bound_verification(),
            metrics: MetricToggles::default(),
            selection: NodeSelection::default(),
            output_dir: PathBuf::from("probe_out"),
            seed: 1,
            workers: 0,
            tol: probe_core::bounds::DEFAULT_TOL,
            gram_ridge: probe_core::bounds::DEFAULT_GRAM_RIDGE,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p must lie in (0, 1], got {}", self.p));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.model.layers == 0 || self.model.hidden_dim == 0 {
            return bad("model needs at least one layer of positive width".into());
        }
        if self.methods.is_empty() {
            return bad("no explanation methods selected".into());
        }
        if !(self.tol >= 0.0) || !(self.gram_ridge >= 0.0) {
            return bad("tol and gram_ridge must be non-negative".into());
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return bad(format!("train_ratio must lie in (0, 1), got {}", self.split.train_ratio));
        }
        let checks = [
            self.train.validate(),
            self.perturbation.validate(),
            self.explainers.gnnexplainer.validate(),
            self.explainers.pgexplainer.validate(),
        ];
        for c in checks {
            c.map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// JSON Schema of the configuration document.
    pub fn schema() -> serde_json::Value {
        serde_json::from_str(include_str!("../schema/config.schema.json")).expect("bundled schema is valid JSON")
    }
}

/// Parses `--nodes a,b,c`.
pub fn parse_node_list(text: &str) -> Result<Vec<usize>, HarnessError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| HarnessError::Config(format!("bad node id {s:?}: {e}"))))
        .collect()
}
