//! Empirical reliability metrics and correlation statistics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::{forward, GnnModel};
use crate::perturb::PerturbationSet;
use crate::scalar::{argmax, dist2, Scalar};
use crate::subgraph::{apply_mask, ComputationSubgraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Unfaithfulness,
    Instability,
    CfMismatch,
    GroupFairnessMismatch,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::Unfaithfulness,
        MetricName::Instability,
        MetricName::CfMismatch,
        MetricName::GroupFairnessMismatch,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MetricName::Unfaithfulness => "unfaithfulness",
            MetricName::Instability => "instability",
            MetricName::CfMismatch => "cf_mismatch",
            MetricName::GroupFairnessMismatch => "group_fairness_mismatch",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `‖f(G) − f(t(E, G))‖₂` for one member.
pub fn masked_gap<T: Scalar>(model: &GnnModel<T>, explanation: &Explanation<T>, member: &ComputationSubgraph<T>) -> Result<f64> {
    let plain = forward(model, member)?.probs;
    let masked = forward(model, &apply_mask(explanation, member)?)?.probs;
    Ok(dist2(&plain, &masked).to_f64_lossy())
}

/// Mean masked gap over every member of `K`, the original included.
pub fn unfaithfulness<T: Scalar>(model: &GnnModel<T>, explanation: &Explanation<T>, set: &PerturbationSet<T>) -> Result<f64> {
    let gaps = set
        .members()
        .map(|m| masked_gap(model, explanation, m))
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

fn hamming(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ProbeError::MaskLength {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

/// Normalized ℓ₁ distance between two edge masks over the union of their
/// neighbor sets; a neighbor missing from one side counts as 0 there.
fn edge_distance<T>(a: &Explanation<T>, b: &Explanation<T>) -> Result<f64> {
    let (na, ma) = (
        a.edge_neighbors.as_ref().ok_or(ProbeError::MissingMask("edge"))?,
        a.edge_mask.as_ref().ok_or(ProbeError::MissingMask("edge"))?,
    );
    let (nb, mb) = (
        b.edge_neighbors.as_ref().ok_or(ProbeError::MissingMask("edge"))?,
        b.edge_mask.as_ref().ok_or(ProbeError::MissingMask("edge"))?,
    );
    let mut union: Vec<usize> = na.iter().chain(nb).copied().collect();
    union.sort_unstable();
    union.dedup();
    if union.is_empty() {
        return Ok(0.0);
    }
    let lookup = |ns: &[usize], ms: &[bool], v: usize| ns.iter().position(|&x| x == v).is_some_and(|i| ms[i]);
    let diff = union
        .iter()
        .filter(|&&v| lookup(na, ma, v) != lookup(nb, mb, v))
        .count();
    Ok(diff as f64 / union.len() as f64)
}

/// Normalized ℓ₁ distance between the binary masks of two explanations of
/// the same kind; for node-and-edge explanations the two distances are
/// averaged.
pub fn mask_distance<T: Scalar>(a: &Explanation<T>, b: &Explanation<T>) -> Result<f64> {
    if a.kind != b.kind {
        return Err(ProbeError::KindMismatch);
    }
    let node = || -> Result<f64> {
        hamming(
            a.node_mask.as_ref().ok_or(ProbeError::MissingMask("node"))?,
            b.node_mask.as_ref().ok_or(ProbeError::MissingMask("node"))?,
        )
    };
    match (a.kind.has_node(), a.kind.has_edge()) {
        (true, false) => node(),
        (false, true) => edge_distance(a, b),
        _ => Ok(0.5 * (node()? + edge_distance(a, b)?)),
    }
}

/// Distance between the explanations of a node and of its perturbation.
pub fn instability<T: Scalar>(original: &Explanation<T>, perturbed: &Explanation<T>) -> Result<f64> {
    mask_distance(original, perturbed)
}

/// Distance between the explanations of a node and of its counterfactual.
pub fn counterfactual_fairness_mismatch<T: Scalar>(original: &Explanation<T>, counterfactual: &Explanation<T>) -> Result<f64> {
    mask_distance(original, counterfactual)
}

/// `‖f(G_u) − f(G_{u^s})‖₂`, reported next to the counterfactual mismatch.
pub fn prediction_gap<T: Scalar>(model: &GnnModel<T>, a: &ComputationSubgraph<T>, b: &ComputationSubgraph<T>) -> Result<f64> {
    Ok(dist2(&forward(model, a)?.probs, &forward(model, b)?.probs).to_f64_lossy())
}

/// `|P(ŷ = 1 | s = 0) − P(ŷ = 1 | s = 1)|`.
pub fn statistical_parity(predicted: &[usize], sensitive: &[u8]) -> Result<f64> {
    if predicted.len() != sensitive.len() {
        return Err(ProbeError::DimensionMismatch(format!(
            "{} predictions for {} sensitive values",
            predicted.len(),
            sensitive.len()
        )));
    }
    if let Some(&bad) = predicted.iter().find(|&&y| y > 1) {
        return Err(ProbeError::InvalidParameter(format!("statistical parity needs binary predictions, got {bad}")));
    }
    let mut counts = [0usize; 2];
    let mut positives = [0usize; 2];
    for (&y, &s) in predicted.iter().zip(sensitive) {
        if s > 1 {
            return Err(ProbeError::InvalidParameter(format!("sensitive value {s} is not binary")));
        }
        counts[s as usize] += 1;
        positives[s as usize] += y;
    }
    for g in 0..2u8 {
        if counts[g as usize] == 0 {
            return Err(ProbeError::EmptyGroup(g));
        }
    }
    let rate = |g: usize| positives[g] as f64 / counts[g] as f64;
    Ok((rate(0) - rate(1)).abs())
}

/// Binary sensitive value of a member's target.
pub fn sensitive_value<T: Scalar>(member: &ComputationSubgraph<T>, sensitive_index: usize) -> Result<u8> {
    let v = *member
        .target_features()
        .get(sensitive_index)
        .ok_or_else(|| ProbeError::DimensionMismatch(format!("sensitive column {sensitive_index} out of range")))?;
    if v == T::zero() {
        Ok(0)
    } else if v == T::one() {
        Ok(1)
    } else {
        Err(ProbeError::NonBinarySensitive {
            column: sensitive_index,
            row: member.target(),
            value: v.to_f64_lossy(),
        })
    }
}

/// The pooled perturbation set for group fairness, with the unmasked
/// predictions computed once.
#[derive(Clone, Debug)]
pub struct FairnessPool<T> {
    pub members: Vec<ComputationSubgraph<T>>,
    pub sensitive: Vec<u8>,
    pub plain: Vec<Vec<f64>>,
}

fn probs64<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>) -> Result<Vec<f64>> {
    Ok(forward(model, sub)?.probs.into_iter().map(|x| x.to_f64_lossy()).collect())
}

impl<T: Scalar> FairnessPool<T> {
    pub fn new(model: &GnnModel<T>, members: Vec<ComputationSubgraph<T>>, sensitive_index: usize) -> Result<Self> {
        let sensitive = members
            .iter()
            .map(|m| sensitive_value(m, sensitive_index))
            .collect::<Result<Vec<u8>>>()?;
        for g in 0..2u8 {
            if !sensitive.contains(&g) {
                return Err(ProbeError::EmptyGroup(g));
            }
        }
        let plain = members.iter().map(|m| probs64(model, m)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            sensitive,
            plain,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Softmax outputs with the explanation applied. The feature mask acts on
    /// every member; the edge mask only on members whose target is the
    /// explained node.
    pub fn masked(&self, model: &GnnModel<T>, explanation: &Explanation<T>) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| probs64(model, &apply_mask(explanation, m)?))
            .collect()
    }
}

/// `|SP(ŷ_K) − SP(ŷ_K^E)|` over a pooled `K` that spans both groups.
pub fn group_fairness_mismatch<T: Scalar>(
    model: &GnnModel<T>,
    explanation: &Explanation<T>,
    pool: &FairnessPool<T>,
) -> Result<f64> {
    group_fairness_from(&pool.sensitive, &pool.plain, &pool.masked(model, explanation)?)
}

/// The same from precomputed softmax outputs.
pub fn group_fairness_from(sensitive: &[u8], plain: &[Vec<f64>], masked: &[Vec<f64>]) -> Result<f64> {
    let hard = |ps: &[Vec<f64>]| ps.iter().map(|p| argmax(p)).collect::<Vec<usize>>();
    let before = statistical_parity(&hard(plain), sensitive)?;
    let after = statistical_parity(&hard(masked), sensitive)?;
    Ok((before - after).abs())
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(ProbeError::DimensionMismatch(format!("{} vs {} observations", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(ProbeError::TooFewSamples {
            needed: 3,
            have: xs.len(),
        });
    }
    Ok(())
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ProbeError::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}
