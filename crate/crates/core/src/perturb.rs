//! Target-node perturbations and the perturbation set `K`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::gnn::{forward, GnnModel};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::subgraph::{subgraph_with_target_override, ComputationSubgraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Probability that a feature dimension of the target receives noise.
    pub feature_noise_prob: f64,
    /// Standard deviation of the Gaussian noise.
    pub noise_sigma: f64,
    /// Probability `p_r` of removing each incident edge and of adding a
    /// random non-edge.
    pub edge_rewire_prob: f64,
    pub require_same_prediction: bool,
    pub max_resample_attempts: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            feature_noise_prob: 0.1,
            noise_sigma: 1.0,
            edge_rewire_prob: 0.01,
            require_same_prediction: true,
            max_resample_attempts: 100,
        }
    }
}

impl PerturbationConfig {
    /// Feature-only perturbations, the setting the gradient and surrogate
    /// bounds are stated for.
    pub fn bound_verification() -> Self {
        Self {
            edge_rewire_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.feature_noise_prob) || !prob(self.edge_rewire_prob) {
            return Err(ProbeError::InvalidParameter("perturbation probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(ProbeError::InvalidParameter(format!("noise_sigma = {}", self.noise_sigma)));
        }
        if self.max_resample_attempts == 0 {
            return Err(ProbeError::InvalidParameter("max_resample_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// What one perturbation did to the target.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord<T> {
    /// Realized feature change `x' − x` (zero where not flagged).
    pub tau: Vec<T>,
    pub flags: Vec<bool>,
    /// Neighbors whose edge to the target was removed.
    pub removed: Vec<usize>,
    /// New neighbors of the target.
    pub added: Vec<usize>,
}

impl<T: Scalar> NoiseRecord<T> {
    pub fn is_identity(&self) -> bool {
        self.tau.iter().all(|&t| t == T::zero()) && self.removed.is_empty() && self.added.is_empty()
    }
}

/// Adds Gaussian noise to the target's non-sensitive features and rewires its
/// incident edges. Other nodes are untouched.
pub fn perturb_node<T: Scalar, R: Rng + ?Sized>(
    graph: &Graph<T>,
    sub: &ComputationSubgraph<T>,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<(ComputationSubgraph<T>, NoiseRecord<T>)> {
    config.validate()?;
    let m = sub.feature_dim();
    let sensitive = graph.sensitive_index();
    let normal = Normal::new(0.0, config.noise_sigma).map_err(|e| ProbeError::InvalidParameter(e.to_string()))?;
    let x = sub.target_features().to_vec();
    let mut row = x.clone();
    let mut flags = vec![false; m];
    for j in 0..m {
        if Some(j) == sensitive {
            continue;
        }
        if rng.gen_bool(config.feature_noise_prob) {
            flags[j] = true;
            row[j] += T::lit(normal.sample(rng));
        }
    }
    let tau: Vec<T> = row.iter().zip(&x).map(|(&a, &b)| a - b).collect();

    let mut removed = Vec::new();
    let mut added = Vec::new();
    if config.edge_rewire_prob > 0.0 {
        let u = sub.target();
        let current = sub.target_neighbors();
        let mut candidates: Vec<usize> = (0..graph.node_count())
            .filter(|&v| v != u && current.binary_search(&v).is_err())
            .collect();
        for &v in &current {
            if rng.gen_bool(config.edge_rewire_prob) {
                removed.push(v);
            }
            if rng.gen_bool(config.edge_rewire_prob) && !candidates.is_empty() {
                let pick = rng.gen_range(0..candidates.len());
                added.push(candidates.remove(pick));
            }
        }
        added.sort_unstable();
    }
    let out = if removed.is_empty() && added.is_empty() {
        sub.with_target_features(&row)
    } else {
        let mut neighbors: Vec<usize> = sub
            .target_neighbors()
            .into_iter()
            .filter(|v| removed.binary_search(v).is_err())
            .chain(added.iter().copied())
            .collect();
        neighbors.sort_unstable();
        subgraph_with_target_override(graph, sub.target(), sub.hop_count(), &row, &neighbors)?
    };
    Ok((
        out,
        NoiseRecord {
            tau,
            flags,
            removed,
            added,
        },
    ))
}

/// The original node and its perturbations.
#[derive(Clone, Debug)]
pub struct PerturbationSet<T> {
    pub original: ComputationSubgraph<T>,
    pub perturbed: Vec<ComputationSubgraph<T>>,
    pub noise_records: Vec<NoiseRecord<T>>,
    /// Draws needed for each accepted perturbation.
    pub attempts: Vec<usize>,
}

impl<T: Scalar> PerturbationSet<T> {
    /// `|K|`, original included.
    pub fn size(&self) -> usize {
        self.perturbed.len() + 1
    }

    /// Original first, then the perturbations in draw order.
    pub fn members(&self) -> impl Iterator<Item = &ComputationSubgraph<T>> {
        std::iter::once(&self.original).chain(self.perturbed.iter())
    }

    pub fn target(&self) -> usize {
        self.original.target()
    }
}

/// Draws `k` perturbations of the subgraph's target, optionally rejecting
/// draws that change the model's predicted class.
pub fn perturbation_set<T: Scalar, R: Rng + ?Sized>(
    graph: &Graph<T>,
    sub: &ComputationSubgraph<T>,
    model: &GnnModel<T>,
    k: usize,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<PerturbationSet<T>> {
    if k == 0 {
        return Err(ProbeError::InvalidParameter("k must be at least 1".into()));
    }
    config.validate()?;
    let label = forward(model, sub)?.prediction();
    let mut perturbed = Vec::with_capacity(k);
    let mut noise_records = Vec::with_capacity(k);
    let mut attempts = Vec::with_capacity(k);
    for _ in 0..k {
        let mut accepted = None;
        for attempt in 1..=config.max_resample_attempts {
            let (candidate, record) = perturb_node(graph, sub, config, rng)?;
            if !config.require_same_prediction || forward(model, &candidate)?.prediction() == label {
                accepted = Some((candidate, record, attempt));
                break;
            }
        }
        let (candidate, record, attempt) = accepted.ok_or(ProbeError::ResampleExhausted(sub.target()))?;
        perturbed.push(candidate);
        noise_records.push(record);
        attempts.push(attempt);
    }
    Ok(PerturbationSet {
        original: sub.clone(),
        perturbed,
        noise_records,
        attempts,
    })
}
