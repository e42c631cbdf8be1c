//! Explanation methods and a single dispatch point over them.

pub mod gnnexplainer;
pub mod gradient;
pub mod graphlime;
pub mod graphmask;
pub mod pgexplainer;
pub mod random;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::{Explanation, ExplanationKind};
use crate::gnn::GnnModel;
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::subgraph::ComputationSubgraph;

pub use gnnexplainer::{gnnexplainer, MaskOptConfig};
pub use gradient::{integrated_gradients, vanilla_grad, Baseline, IgConfig};
pub use graphlime::{graphlime, GraphLimeArtifacts, GraphLimeConfig};
pub use graphmask::{graphmask_explain, graphmask_train, ErasureConfig, ErasureFunction};
pub use pgexplainer::{pgexplainer_explain, pgexplainer_train, PgExplainer};
pub use random::{full_mask, random_edges, random_node_features};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomNodeFeatures,
    RandomEdges,
    VanillaGrad,
    IntegratedGradients,
    #[serde(rename = "graphlime")]
    GraphLime,
    #[serde(rename = "graphmask")]
    GraphMask,
    #[serde(rename = "gnnexplainer")]
    GnnExplainer,
    #[serde(rename = "pgexplainer")]
    PgExplainer,
    /// Control: keeps everything.
    FullMask,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::RandomNodeFeatures,
        Method::RandomEdges,
        Method::VanillaGrad,
        Method::IntegratedGradients,
        Method::GraphLime,
        Method::GraphMask,
        Method::GnnExplainer,
        Method::PgExplainer,
        Method::FullMask,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::RandomNodeFeatures => "random_node_features",
            Method::RandomEdges => "random_edges",
            Method::VanillaGrad => "vanilla_grad",
            Method::IntegratedGradients => "integrated_gradients",
            Method::GraphLime => "graphlime",
            Method::GraphMask => "graphmask",
            Method::GnnExplainer => "gnnexplainer",
            Method::PgExplainer => "pgexplainer",
            Method::FullMask => "full_mask",
        }
    }

    pub fn kind(self) -> ExplanationKind {
        match self {
            Method::RandomNodeFeatures | Method::VanillaGrad | Method::IntegratedGradients | Method::GraphLime => {
                ExplanationKind::NodeFeature
            }
            Method::RandomEdges | Method::GraphMask | Method::PgExplainer => ExplanationKind::Edge,
            Method::GnnExplainer | Method::FullMask => ExplanationKind::Both,
        }
    }

    /// Whether explanations of the target alone need the target to have edges.
    pub fn needs_edges(self) -> bool {
        self.kind() == ExplanationKind::Edge
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.tag()).collect();
            ProbeError::Parse(format!("unknown method {s:?}; valid methods: {}", names.join(", ")))
        })
    }
}

/// Per-method settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerSettings {
    pub integrated_gradients: IgConfig,
    pub graphlime: GraphLimeConfig,
    pub graphmask: ErasureConfig,
    pub gnnexplainer: MaskOptConfig,
    pub pgexplainer: MaskOptConfig,
}

/// Explainers that must be fitted before they can explain.
#[derive(Clone, Debug, Default)]
pub struct TrainedExplainers<T> {
    pub graphmask: Option<ErasureFunction<T>>,
    pub pgexplainer: Option<PgExplainer<T>>,
}

/// What every explainer call needs besides the subgraph.
#[derive(Clone, Copy)]
pub struct ExplainContext<'a, T> {
    pub model: &'a GnnModel<T>,
    pub graph: &'a Graph<T>,
    pub settings: &'a ExplainerSettings,
    pub trained: &'a TrainedExplainers<T>,
}

impl<'a, T: Scalar> ExplainContext<'a, T> {
    /// Explains the subgraph's target with `method`. `rng` is consumed only by
    /// the random baselines.
    pub fn explain<R: Rng + ?Sized>(
        &self,
        method: Method,
        sub: &ComputationSubgraph<T>,
        p: f64,
        rng: &mut R,
    ) -> Result<Explanation<T>> {
        let s = self.settings;
        match method {
            Method::RandomNodeFeatures => random_node_features(rng, sub.target(), sub.feature_dim(), p),
            Method::RandomEdges => random_edges(rng, sub, p),
            Method::VanillaGrad => vanilla_grad(self.model, sub, p),
            Method::IntegratedGradients => integrated_gradients(self.model, sub, &s.integrated_gradients, p),
            Method::GraphLime => Ok(graphlime(self.model, sub, &s.graphlime, p)?.0),
            Method::GraphMask => {
                let erasure = self
                    .trained
                    .graphmask
                    .as_ref()
                    .ok_or_else(|| ProbeError::InvalidParameter("graphmask has not been trained".into()))?;
                graphmask_explain(erasure, self.model, sub, p)
            }
            Method::GnnExplainer => gnnexplainer(self.model, sub, &s.gnnexplainer, p),
            Method::PgExplainer => {
                let pg = self
                    .trained
                    .pgexplainer
                    .as_ref()
                    .ok_or_else(|| ProbeError::InvalidParameter("pgexplainer has not been trained".into()))?;
                pgexplainer_explain(pg, self.model, self.graph, sub, p)
            }
            Method::FullMask => Ok(full_mask(sub, p)),
        }
    }
}
