//! Closed-form upper bounds on the reliability metrics, and the verifier
//! that compares them with measured values.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ProbeError, Result};
use crate::explain::graphlime::GraphLimeArtifacts;
use crate::explain::graphmask::ErasureFunction;
use crate::explanation::Explanation;
use crate::gnn::lipschitz::{GradientConstant, LipschitzProfile};
use crate::gnn::GnnModel;
use crate::linalg::{invert_unchecked, Matrix};
use crate::metrics::{masked_gap, FairnessPool};
use crate::perturb::{NoiseRecord, PerturbationSet};
use crate::scalar::{argmax, dist2, norm2, vector_p_norm, Scalar};
use crate::subgraph::ComputationSubgraph;

/// Absolute tolerance of the verifier.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Condition estimate above which an inversion is flagged.
pub const CONDITION_WARNING: f64 = 1e12;
/// Ridge added to a feature Gram matrix before inverting it.
pub const DEFAULT_GRAM_RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Theorem {
    #[serde(rename = "T1_node")]
    T1Node,
    #[serde(rename = "T1_edge")]
    T1Edge,
    /// Node and edge branches summed.
    #[serde(rename = "T1_both")]
    T1Both,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl Theorem {
    pub fn tag(self) -> &'static str {
        match self {
            Theorem::T1Node => "T1_node",
            Theorem::T1Edge => "T1_edge",
            Theorem::T1Both => "T1_both",
            Theorem::T2 => "T2",
            Theorem::T3 => "T3",
            Theorem::T4 => "T4",
            Theorem::T5 => "T5",
            Theorem::T6 => "T6",
            Theorem::T7 => "T7",
            Theorem::T8 => "T8",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub theorem: Theorem,
    pub value: f64,
    /// SHA-256 prefix of the exact inputs.
    pub inputs_digest: String,
    pub worst_case: Option<f64>,
}

/// Hashes a sequence of floats by their bit patterns.
pub fn digest(values: impl IntoIterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn bound(theorem: Theorem, value: f64, inputs: Vec<f64>) -> Result<BoundValue> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(ProbeError::Degenerate(format!("{theorem} bound evaluated to {value}")));
    }
    Ok(BoundValue {
        theorem,
        value,
        inputs_digest: digest(inputs),
        worst_case: None,
    })
}

/// Norm of the target features the explanation zeroes out.
fn dropped_feature_norm<T: Scalar>(explanation: &Explanation<T>, sub: &ComputationSubgraph<T>) -> Result<f64> {
    let mask = explanation.node_mask.as_ref().ok_or(ProbeError::MissingMask("node"))?;
    if mask.len() != sub.feature_dim() {
        return Err(ProbeError::MaskLength {
            expected: sub.feature_dim(),
            found: mask.len(),
        });
    }
    let dropped: Vec<f64> = sub
        .target_features()
        .iter()
        .zip(mask)
        .map(|(&x, &keep)| if keep { 0.0 } else { x.to_f64_lossy() })
        .collect();
    Ok(norm2(&dropped))
}

/// `‖Σ x_v‖₂` over the target's neighbors whose edge the explanation drops.
fn dropped_neighbor_norm<T: Scalar>(explanation: &Explanation<T>, sub: &ComputationSubgraph<T>) -> Result<f64> {
    let mask = explanation.edge_mask.as_ref().ok_or(ProbeError::MissingMask("edge"))?;
    let neighbors = explanation.edge_neighbors.as_ref().ok_or(ProbeError::MissingMask("edge"))?;
    let present = sub.target_neighbors();
    let mut delta = vec![0.0; sub.feature_dim()];
    for (&v, &keep) in neighbors.iter().zip(mask) {
        if keep || present.binary_search(&v).is_err() {
            continue;
        }
        let row = sub.features().row(sub.local_index(v).expect("neighbor in subgraph"));
        for (d, &x) in delta.iter_mut().zip(row) {
            *d += x.to_f64_lossy();
        }
    }
    Ok(norm2(&delta))
}

/// Faithfulness bound for an explanation of `sub`'s target over a set of
/// `k_size` members.
pub fn faithfulness_bound<T: Scalar>(
    profile: &LipschitzProfile,
    explanation: &Explanation<T>,
    sub: &ComputationSubgraph<T>,
    k_size: usize,
) -> Result<BoundValue> {
    explanation.validate()?;
    if k_size == 0 {
        return Err(ProbeError::InvalidParameter("|K| must be positive".into()));
    }
    let factor = (1.0 + k_size as f64) / k_size as f64;
    let node = if explanation.kind.has_node() {
        profile.gamma11 * factor * dropped_feature_norm(explanation, sub)?
    } else {
        0.0
    };
    let edge = if explanation.kind.has_edge() {
        profile.gamma12 * factor * dropped_neighbor_norm(explanation, sub)?
    } else {
        0.0
    };
    let theorem = match (explanation.kind.has_node(), explanation.kind.has_edge()) {
        (true, false) => Theorem::T1Node,
        (false, true) => Theorem::T1Edge,
        _ => Theorem::T1Both,
    };
    let mut inputs = vec![profile.gamma11, profile.gamma12, k_size as f64];
    inputs.extend(sub.target_features().iter().map(|x| x.to_f64_lossy()));
    inputs.extend(explanation.node_mask.iter().flatten().map(|&b| b as u8 as f64));
    inputs.extend(explanation.edge_mask.iter().flatten().map(|&b| b as u8 as f64));
    bound(theorem, node + edge, inputs)
}

/// `γ₃ ‖x' − x‖_p`, with `γ₃` evaluated at the original node's prediction.
pub fn grad_stability_bound<T: Scalar>(
    constant: &GradientConstant,
    probs: &[T],
    label: usize,
    x: &[T],
    x_perturbed: &[T],
) -> Result<BoundValue> {
    let gamma3 = constant.gamma3(probs, label);
    let diff: Vec<f64> = x
        .iter()
        .zip(x_perturbed)
        .map(|(&a, &b)| (b - a).to_f64_lossy())
        .collect();
    let mut inputs = vec![gamma3];
    inputs.extend(diff.iter().copied());
    bound(Theorem::T2, gamma3 * vector_p_norm(&diff, constant.p), inputs)
}

/// `γ₃`: a counterfactual moves the input by exactly one unit.
pub fn grad_cf_bound<T: Scalar>(constant: &GradientConstant, probs: &[T], label: usize) -> Result<BoundValue> {
    let gamma3 = constant.gamma3(probs, label);
    bound(Theorem::T5, gamma3, vec![gamma3])
}

/// `γ₄^l ‖q' − q‖₂` for erasure layer `layer`.
pub fn graphmask_bound<T: Scalar>(erasure: &ErasureFunction<T>, q: &[T], q_other: &[T], layer: usize, counterfactual: bool) -> Result<BoundValue> {
    if layer >= erasure.layer_count() {
        return Err(ProbeError::InvalidParameter(format!("layer {layer} outside 0..{}", erasure.layer_count())));
    }
    if q.len() != q_other.len() {
        return Err(ProbeError::DimensionMismatch("q vectors differ in length".into()));
    }
    let gamma4 = erasure.gamma4(layer);
    let d = dist2(q, q_other).to_f64_lossy();
    let theorem = if counterfactual { Theorem::T6 } else { Theorem::T3 };
    bound(theorem, gamma4 * d, vec![gamma4, d, layer as f64])
}

/// Which noise feeds the surrogate bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimeVariant {
    /// Gaussian feature noise from a perturbation record.
    Stability,
    /// The sensitive column flipped, `η = ±1`.
    Counterfactual,
}

/// One feature's contribution to the surrogate bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeTerm {
    pub feature: usize,
    pub eta: f64,
    /// `eᵀ W⁻¹ e`
    pub c: f64,
    /// `|tr L̄| · tr((K^(k) + λI)⁻¹)`
    pub gamma2: f64,
    pub value: f64,
    /// `‖W W⁻¹ − I‖_max`
    pub w_residual: f64,
    pub w_condition: f64,
    pub gram_residual: f64,
    pub gram_condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeBound {
    pub bound: BoundValue,
    pub terms: Vec<LimeTerm>,
}

impl LimeBound {
    /// Worst `‖W W⁻¹ − I‖_max` over the terms.
    pub fn max_w_residual(&self) -> f64 {
        self.terms.iter().map(|t| t.w_residual).fold(0.0, f64::max)
    }

    pub fn max_gram_residual(&self) -> f64 {
        self.terms.iter().map(|t| t.gram_residual).fold(0.0, f64::max)
    }

    pub fn ill_conditioned(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.w_condition > CONDITION_WARNING || t.gram_condition > CONDITION_WARNING)
    }
}

/// The noise matrix for feature `k`: unit diagonal and, for samples `i < j`,
/// `W_ij = W_ji = exp(−η (x_i − x_j) / σ²)`.
pub fn noise_matrix(values: &[f64], eta: f64, sigma: f64) -> Matrix<f64> {
    let n = values.len();
    let s2 = sigma * sigma;
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let (a, b) = (i.min(j), i.max(j));
            (-eta * (values[a] - values[b]) / s2).exp()
        }
    })
}

/// `γ₂` for one feature with the diagnostics of its Gram inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
struct GramTerm {
    gamma2: f64,
    residual: f64,
    condition: f64,
}

/// Evaluates surrogate bounds against one set of artifacts, caching the
/// per-feature Gram inverses that every perturbation pair shares.
pub struct LimeBounder<'a> {
    artifacts: &'a GraphLimeArtifacts,
    ridge: f64,
    grams: Vec<Option<GramTerm>>,
}

impl<'a> LimeBounder<'a> {
    pub fn new(artifacts: &'a GraphLimeArtifacts, ridge: f64) -> Self {
        Self {
            artifacts,
            ridge,
            grams: vec![None; artifacts.feature_grams.len()],
        }
    }

    fn gram(&mut self, feature: usize) -> Result<GramTerm> {
        if let Some(g) = self.grams[feature] {
            return Ok(g);
        }
        let a = self.artifacts;
        let mut k = a.feature_grams[feature].clone();
        for i in 0..a.sample_count() {
            k[(i, i)] += self.ridge;
        }
        let k_inv = invert_unchecked(&k)?;
        let g = GramTerm {
            gamma2: a.residual_without(feature).trace().abs() * k_inv.matrix.trace(),
            residual: k_inv.residual,
            condition: k_inv.condition_estimate,
        };
        self.grams[feature] = Some(g);
        Ok(g)
    }

    /// `n · |c − 1| · γ₂` for one feature, reading `(1/c)⁻¹ − I` as `(c − 1) I`.
    pub fn term(&mut self, feature: usize, eta: f64) -> Result<LimeTerm> {
        let a = self.artifacts;
        if feature >= a.feature_grams.len() {
            return Err(ProbeError::InvalidParameter(format!("feature {feature} out of range")));
        }
        let n = a.sample_count();
        let w = noise_matrix(&a.inputs.column(feature), eta, a.sigma_x);
        let w_inv = invert_unchecked(&w)?;
        let c: f64 = w_inv.matrix.as_slice().iter().sum();
        let g = self.gram(feature)?;
        Ok(LimeTerm {
            feature,
            eta,
            c,
            gamma2: g.gamma2,
            value: g.gamma2 * n as f64 * (c - 1.0).abs(),
            w_residual: w_inv.residual,
            w_condition: w_inv.condition_estimate,
            gram_residual: g.residual,
            gram_condition: g.condition,
        })
    }

    /// Surrogate-coefficient bound summed over the perturbed features
    /// (stability) or evaluated at the sensitive column (counterfactual).
    pub fn bound<T: Scalar>(&mut self, noise: Option<&NoiseRecord<T>>, sensitive: Option<(usize, f64)>, variant: LimeVariant) -> Result<LimeBound> {
        let features: Vec<(usize, f64)> = match variant {
            LimeVariant::Stability => {
                let rec = noise.ok_or_else(|| ProbeError::InvalidParameter("stability bound needs a noise record".into()))?;
                rec.tau
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| **t != T::zero())
                    .map(|(k, t)| (k, t.to_f64_lossy()))
                    .collect()
            }
            LimeVariant::Counterfactual => {
                let (s, eta) = sensitive.ok_or(ProbeError::SensitiveUnset)?;
                if eta.abs() != 1.0 {
                    return Err(ProbeError::InvalidParameter(format!("counterfactual eta must be ±1, got {eta}")));
                }
                vec![(s, eta)]
            }
        };
        let terms = features
            .iter()
            .map(|&(k, eta)| self.term(k, eta))
            .collect::<Result<Vec<_>>>()?;
        let value = terms.iter().map(|t| t.value).fold(0.0, |a, b| a + b);
        let mut inputs = vec![self.artifacts.sigma_x, self.ridge];
        inputs.extend(self.artifacts.beta.iter().copied());
        inputs.extend(features.iter().flat_map(|&(k, e)| [k as f64, e]));
        let theorem = match variant {
            LimeVariant::Stability => Theorem::T4,
            LimeVariant::Counterfactual => Theorem::T7,
        };
        Ok(LimeBound {
            bound: bound(theorem, value, inputs)?,
            terms,
        })
    }
}

pub fn graphlime_term(artifacts: &GraphLimeArtifacts, feature: usize, eta: f64, ridge: f64) -> Result<LimeTerm> {
    LimeBounder::new(artifacts, ridge).term(feature, eta)
}

/// One-shot form of [`LimeBounder::bound`].
pub fn graphlime_bound<T: Scalar>(
    artifacts: &GraphLimeArtifacts,
    noise: Option<&NoiseRecord<T>>,
    sensitive: Option<(usize, f64)>,
    variant: LimeVariant,
    ridge: f64,
) -> Result<LimeBound> {
    LimeBounder::new(artifacts, ridge).bound(noise, sensitive, variant)
}

/// `Σ_s |mean over group s of |Δ P(class 1)||` between masked and plain
/// predictions of the pooled members.
pub fn group_fairness_bound_from(sensitive: &[u8], plain: &[Vec<f64>], masked: &[Vec<f64>]) -> Result<BoundValue> {
    if plain.len() != sensitive.len() || masked.len() != sensitive.len() {
        return Err(ProbeError::DimensionMismatch("pool predictions out of sync".into()));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for ((&s, p), q) in sensitive.iter().zip(plain).zip(masked) {
        if s > 1 {
            return Err(ProbeError::InvalidParameter(format!("sensitive value {s} is not binary")));
        }
        let positive = |v: &[f64]| v.get(1).copied().unwrap_or(0.0);
        sums[s as usize] += (positive(q) - positive(p)).abs();
        counts[s as usize] += 1;
    }
    for g in 0..2u8 {
        if counts[g as usize] == 0 {
            return Err(ProbeError::EmptyGroup(g));
        }
    }
    let value = (sums[0] / counts[0] as f64).abs() + (sums[1] / counts[1] as f64).abs();
    let mut inputs: Vec<f64> = plain.iter().flatten().copied().collect();
    inputs.extend(masked.iter().flatten().copied());
    bound(Theorem::T8, value, inputs)
}

/// The same group sum with hard predictions in place of probabilities:
/// `Σ_s |mean over group s of (ŷ' − ŷ)|` for the positive class. A triangle
/// inequality away from the label-based mismatch, so never below it.
pub fn group_fairness_label_bound(sensitive: &[u8], plain: &[Vec<f64>], masked: &[Vec<f64>]) -> Result<f64> {
    if plain.len() != sensitive.len() || masked.len() != sensitive.len() {
        return Err(ProbeError::DimensionMismatch("pool predictions out of sync".into()));
    }
    let positive = |v: &[f64]| if argmax(v) == 1 { 1.0 } else { 0.0 };
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for ((&s, p), q) in sensitive.iter().zip(plain).zip(masked) {
        if s > 1 {
            return Err(ProbeError::InvalidParameter(format!("sensitive value {s} is not binary")));
        }
        sums[s as usize] += positive(q) - positive(p);
        counts[s as usize] += 1;
    }
    if let Some(g) = (0..2u8).find(|&g| counts[g as usize] == 0) {
        return Err(ProbeError::EmptyGroup(g));
    }
    Ok((sums[0] / counts[0] as f64).abs() + (sums[1] / counts[1] as f64).abs())
}

pub fn group_fairness_bound<T: Scalar>(
    model: &GnnModel<T>,
    explanation: &Explanation<T>,
    pool: &FairnessPool<T>,
) -> Result<BoundValue> {
    let masked = pool.masked(model, explanation)?;
    group_fairness_bound_from(&pool.sensitive, &pool.plain, &masked)
}

/// Trivial range of the ℓ₂ gap between two probability vectors.
pub const SOFTMAX_GAP_RANGE: f64 = std::f64::consts::SQRT_2;

/// `max over K of ‖f(G') − f(t(E, G'))‖₂`.
pub fn worst_case_bound<T: Scalar>(model: &GnnModel<T>, set: &PerturbationSet<T>, explanation: &Explanation<T>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for m in set.members() {
        worst = worst.max(masked_gap(model, explanation, m)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub node: usize,
    pub method: String,
    pub metric: String,
    pub theorem: Theorem,
    pub metric_value: f64,
    pub bound_value: f64,
    pub slack: f64,
    pub violated: bool,
    pub tol: f64,
}

pub const VERIFICATION_CSV_HEADER: &str = "node,method,metric,theorem,metric_value,bound_value,slack,violated";

impl VerificationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?},{}",
            self.node,
            self.method,
            self.metric,
            self.theorem,
            self.metric_value,
            self.bound_value,
            self.slack,
            self.violated
        )
    }
}

/// Compares a measured value with its bound: violated iff
/// `bound − metric < −tol`.
pub fn verify(node: usize, method: &str, metric: &str, theorem: Theorem, metric_value: f64, bound_value: f64, tol: f64) -> VerificationRecord {
    let slack = bound_value - metric_value;
    VerificationRecord {
        node,
        method: method.to_string(),
        metric: metric.to_string(),
        theorem,
        metric_value,
        bound_value,
        slack,
        violated: slack < -tol || slack.is_nan(),
        tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::full_mask;
    use crate::gnn::lipschitz::lipschitz_profile;
    use crate::gnn::model::Architecture;
    use crate::graph::{random_graph, Graph};
    use crate::rng::seeded;
    use crate::subgraph::computation_subgraph;

    #[test]
    fn verify_cases() {
        let r = verify(0, "m", "x", Theorem::T2, 0.1, 0.3, DEFAULT_TOL);
        assert!((r.slack - 0.2).abs() < 1e-15 && !r.violated);
        assert!(!verify(0, "m", "x", Theorem::T2, 0.3, 0.3 - 1e-12, DEFAULT_TOL).violated);
        assert!(verify(0, "m", "x", Theorem::T2, 0.3, 0.1, DEFAULT_TOL).violated);
    }

    #[test]
    fn faithfulness_branches() {
        let g: Graph<f64> = random_graph(10, 4, 2, 0.4, 61).unwrap();
        let model: GnnModel<f64> = GnnModel::init(&Architecture::uniform(4, 5, 2, 2), &mut seeded(62)).unwrap();
        let profile = lipschitz_profile(&model);
        let s = computation_subgraph(&g, 0, 2).unwrap();
        assert_eq!(faithfulness_bound(&profile, &full_mask(&s, 0.25), &s, 11).unwrap().value, 0.0);
        let mut empty = Explanation::node_feature(0, "t", 0.25, vec![1.0; 4]).unwrap();
        empty.node_mask = Some(vec![false; 4]);
        let b = faithfulness_bound(&profile, &empty, &s, 11).unwrap();
        let expect = profile.gamma11 * 12.0 / 11.0 * norm2(s.target_features());
        assert!((b.value - expect).abs() < 1e-12 * expect);
        assert_eq!(b.theorem, Theorem::T1Node);
    }

    #[test]
    fn noise_matrix_zero_eta_is_singular() {
        let w = noise_matrix(&[0.1, 0.5, 0.9], 0.0, 1.0);
        assert!(matches!(invert_unchecked(&w), Err(ProbeError::Singular)));
        let one = noise_matrix(&[0.3], 0.7, 1.0);
        let inv = invert_unchecked(&one).unwrap();
        assert_eq!(inv.matrix.as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn group_fairness_bound_hand_case() {
        let plain = vec![vec![0.5, 0.5], vec![0.6, 0.4]];
        let masked = vec![vec![0.2, 0.8], vec![0.7, 0.3]];
        let b = group_fairness_bound_from(&[0, 1], &plain, &masked).unwrap();
        assert!((b.value - 0.4).abs() < 1e-12);
        let same = group_fairness_bound_from(&[0, 1], &plain, &plain).unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn label_bound_uses_signed_group_means() {
        let pos = vec![0.2, 0.8];
        let neg = vec![0.7, 0.3];
        // group 0: one flip up and one flip down cancel; group 1: one flip up
        let plain = vec![neg.clone(), pos.clone(), neg.clone(), neg.clone()];
        let masked = vec![pos.clone(), neg.clone(), pos, neg];
        let b = group_fairness_label_bound(&[0, 0, 1, 1], &plain, &masked).unwrap();
        assert_eq!(b, 0.5);
        assert!(matches!(
            group_fairness_label_bound(&[0, 0], &plain[..2], &masked[..2]),
            Err(ProbeError::EmptyGroup(1))
        ));
    }

    #[test]
    fn cached_lime_terms_match_one_shot_terms() {
        let values = [0.1, 0.7, -0.4, 1.3, 0.2];
        let inputs = Matrix::from_fn(5, 2, |i, k| values[i] * (k as f64 + 1.0));
        let outputs = Matrix::from_fn(5, 2, |i, c| if c == 0 { values[i] } else { 1.0 - values[i] });
        let art = GraphLimeArtifacts::fit(vec![0, 1, 2, 3, 4], inputs, outputs, 0.0).unwrap();
        let mut bounder = LimeBounder::new(&art, DEFAULT_GRAM_RIDGE);
        for eta in [0.3, -0.8, 0.3] {
            for k in 0..2 {
                let cached = bounder.term(k, eta).unwrap();
                let fresh = graphlime_term(&art, k, eta, DEFAULT_GRAM_RIDGE).unwrap();
                assert_eq!(cached, fresh);
                assert!(cached.w_residual <= 1e-8);
            }
        }
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        assert_eq!(digest([1.0, 2.0]), digest([1.0, 2.0]));
        assert_ne!(digest([1.0, 2.0]), digest([2.0, 1.0]));
        assert_eq!(digest([0.5]).len(), 16);
    }
}
