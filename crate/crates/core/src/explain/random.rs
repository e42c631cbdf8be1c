//! Random baselines and the full-mask control.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ProbeError, Result};
use crate::explanation::{Explanation, ExplanationKind};
use crate::scalar::Scalar;
use crate::subgraph::ComputationSubgraph;

/// Standard normal feature scores.
pub fn random_node_features<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    node: usize,
    feature_dim: usize,
    p: f64,
) -> Result<Explanation<T>> {
    let scores = (0..feature_dim)
        .map(|_| T::lit(StandardNormal.sample(rng)))
        .collect();
    Explanation::node_feature(node, super::Method::RandomNodeFeatures.tag(), p, scores)
}

/// Uniform scores over the target's incident edges.
pub fn random_edges<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    sub: &ComputationSubgraph<T>,
    p: f64,
) -> Result<Explanation<T>> {
    let neighbors = sub.target_neighbors();
    if neighbors.is_empty() {
        return Err(ProbeError::IsolatedNode(sub.target()));
    }
    let scores = neighbors.iter().map(|_| T::lit(rng.gen::<f64>())).collect();
    Explanation::edge(sub.target(), super::Method::RandomEdges.tag(), p, neighbors, scores)
}

/// Keeps every feature and every edge; `t` is then the identity.
pub fn full_mask<T: Scalar>(sub: &ComputationSubgraph<T>, p: f64) -> Explanation<T> {
    let m = sub.feature_dim();
    let neighbors = sub.target_neighbors();
    let e = neighbors.len();
    Explanation {
        node: sub.target(),
        method: super::Method::FullMask.tag().to_string(),
        p,
        kind: ExplanationKind::Both,
        node_scores: Some(vec![T::one(); m]),
        node_mask: Some(vec![true; m]),
        edge_neighbors: Some(neighbors),
        edge_scores: Some(vec![T::one(); e]),
        edge_mask: Some(vec![true; e]),
        per_layer_edge_scores: None,
    }
}
