use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    NodeFeature,
    Edge,
    Both,
}

impl ExplanationKind {
    pub fn has_node(self) -> bool {
        matches!(self, Self::NodeFeature | Self::Both)
    }

    pub fn has_edge(self) -> bool {
        matches!(self, Self::Edge | Self::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NodeFeature => "node-feature",
            Self::Edge => "edge",
            Self::Both => "both",
        }
    }
}

/// Importance scores and binary masks for one target node.
///
/// Edge entries are indexed by the target's neighbor ids in
/// `edge_neighbors`, so explanations of perturbed copies with rewired
/// neighborhoods stay comparable.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation<T> {
    pub node: usize,
    pub method: String,
    pub p: f64,
    pub kind: ExplanationKind,
    pub node_scores: Option<Vec<T>>,
    pub node_mask: Option<Vec<bool>>,
    pub edge_neighbors: Option<Vec<usize>>,
    pub edge_scores: Option<Vec<T>>,
    pub edge_mask: Option<Vec<bool>>,
    /// GraphMASK raw location parameters, one vector per GNN layer.
    pub per_layer_edge_scores: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Explanation<T> {
    pub fn node_feature(node: usize, method: &str, p: f64, scores: Vec<T>) -> Result<Self> {
        let mask = top_p_mask(&scores, p)?;
        Ok(Self {
            node,
            method: method.to_string(),
            p,
            kind: ExplanationKind::NodeFeature,
            node_scores: Some(scores),
            node_mask: Some(mask),
            edge_neighbors: None,
            edge_scores: None,
            edge_mask: None,
            per_layer_edge_scores: None,
        })
    }

    pub fn edge(node: usize, method: &str, p: f64, neighbors: Vec<usize>, scores: Vec<T>) -> Result<Self> {
        if neighbors.len() != scores.len() {
            return Err(ProbeError::MaskLength {
                expected: neighbors.len(),
                found: scores.len(),
            });
        }
        let mask = top_p_mask(&scores, p)?;
        Ok(Self {
            node,
            method: method.to_string(),
            p,
            kind: ExplanationKind::Edge,
            node_scores: None,
            node_mask: None,
            edge_neighbors: Some(neighbors),
            edge_scores: Some(scores),
            edge_mask: Some(mask),
            per_layer_edge_scores: None,
        })
    }

    /// Node and edge parts combined; an empty edge set leaves only the node
    /// part populated but keeps `kind = Both`.
    pub fn both(
        node: usize,
        method: &str,
        p: f64,
        node_scores: Vec<T>,
        neighbors: Vec<usize>,
        edge_scores: Vec<T>,
    ) -> Result<Self> {
        let mut e = Self::node_feature(node, method, p, node_scores)?;
        e.kind = ExplanationKind::Both;
        e.edge_mask = Some(if edge_scores.is_empty() {
            Vec::new()
        } else {
            top_p_mask(&edge_scores, p)?
        });
        e.edge_neighbors = Some(neighbors);
        e.edge_scores = Some(edge_scores);
        Ok(e)
    }

    /// Checks mask presence for the declared kind.
    pub fn validate(&self) -> Result<()> {
        if self.kind.has_node() && self.node_mask.is_none() {
            return Err(ProbeError::MissingMask(self.kind.name()));
        }
        if self.kind.has_edge() && (self.edge_mask.is_none() || self.edge_neighbors.is_none()) {
            return Err(ProbeError::MissingMask(self.kind.name()));
        }
        if self.node_mask.is_some() && self.node_scores.is_none() {
            return Err(ProbeError::MissingMask("node scores"));
        }
        if self.edge_mask.is_some() && self.edge_scores.is_none() {
            return Err(ProbeError::MissingMask("edge scores"));
        }
        Ok(())
    }
}

/// Number of entries a top-p mask keeps: `⌈p·len⌉`.
pub fn top_p_count(len: usize, p: f64) -> usize {
    // Guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4.
    let raw = p * len as f64;
    let count = (raw - 1e-9 * raw.max(1.0)).ceil();
    (count.max(0.0) as usize).min(len)
}

/// Marks the `⌈p·len⌉` entries with the largest `|score|`; ties go to the lower
/// index.
pub fn top_p_mask<T: Scalar>(scores: &[T], p: f64) -> Result<Vec<bool>> {
    if scores.is_empty() {
        return Err(ProbeError::InvalidParameter("top-p of an empty score vector".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(ProbeError::InvalidParameter(format!("p = {p} outside (0, 1]")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ProbeError::InvalidParameter(format!("non-finite score at index {i}")));
    }
    let keep = top_p_count(scores.len(), p);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .expect("finite")
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; scores.len()];
    for &i in order.iter().take(keep) {
        mask[i] = true;
    }
    Ok(mask)
}

/// On-disk form of an explanation. Scores are written as 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub node: usize,
    pub method: String,
    pub p: f64,
    pub kind: ExplanationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_neighbors: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer_edge_scores: Option<Vec<Vec<f64>>>,
}

fn widen<T: Scalar>(xs: &Option<Vec<T>>) -> Option<Vec<f64>> {
    xs.as_ref().map(|v| v.iter().map(|x| x.to_f64_lossy()).collect())
}

fn narrow<T: Scalar>(xs: &Option<Vec<f64>>) -> Option<Vec<T>> {
    xs.as_ref().map(|v| v.iter().map(|&x| T::lit(x)).collect())
}

impl<T: Scalar> From<&Explanation<T>> for ExplanationRecord {
    fn from(e: &Explanation<T>) -> Self {
        Self {
            node: e.node,
            method: e.method.clone(),
            p: e.p,
            kind: e.kind,
            node_scores: widen(&e.node_scores),
            edge_neighbors: e.edge_neighbors.clone(),
            edge_scores: widen(&e.edge_scores),
            node_mask: e.node_mask.clone(),
            edge_mask: e.edge_mask.clone(),
            per_layer_edge_scores: e
                .per_layer_edge_scores
                .as_ref()
                .map(|ls| ls.iter().map(|l| l.iter().map(|x| x.to_f64_lossy()).collect()).collect()),
        }
    }
}

impl ExplanationRecord {
    pub fn to_explanation<T: Scalar>(&self) -> Result<Explanation<T>> {
        let e = Explanation {
            node: self.node,
            method: self.method.clone(),
            p: self.p,
            kind: self.kind,
            node_scores: narrow(&self.node_scores),
            node_mask: self.node_mask.clone(),
            edge_neighbors: self.edge_neighbors.clone(),
            edge_scores: narrow(&self.edge_scores),
            edge_mask: self.edge_mask.clone(),
            per_layer_edge_scores: self
                .per_layer_edge_scores
                .as_ref()
                .map(|ls| ls.iter().map(|l| l.iter().map(|&x| T::lit(x)).collect()).collect()),
        };
        e.validate()?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn picks_largest_magnitudes() {
        let m = top_p_mask(&[3.0f64, -5.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(m, vec![true, true, false, false]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = top_p_mask(&[1.0f64; 8], 0.25).unwrap();
        assert_eq!(m, vec![true, true, false, false, false, false, false, false]);
    }

    #[test]
    fn p_one_keeps_everything() {
        assert!(top_p_mask(&[0.1f64, 0.2, -0.3], 1.0).unwrap().iter().all(|&b| b));
    }

    #[test]
    fn count_is_ceiling() {
        assert_eq!(top_p_count(8, 0.25), 2);
        assert_eq!(top_p_count(1, 0.25), 1);
        assert_eq!(top_p_count(10, 0.3), 3);
        assert_eq!(top_p_count(10, 0.25), 3);
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(top_p_mask::<f64>(&[], 0.5).is_err());
        assert!(top_p_mask(&[1.0f64], 0.0).is_err());
    }

    #[test]
    fn record_round_trips_through_json() {
        let mut e = Explanation::both(3, "gnnexplainer", 0.25, vec![0.1f64, 0.9, 0.3], vec![1, 4], vec![0.7, 0.2]).unwrap();
        e.per_layer_edge_scores = Some(vec![vec![1.5, -2.0]]);
        let text = serde_json::to_string(&ExplanationRecord::from(&e)).unwrap();
        let back: ExplanationRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_explanation::<f64>().unwrap(), e);
        let plain = Explanation::node_feature(0, "vanilla_grad", 0.5, vec![1.0f64, 0.0]).unwrap();
        let text = serde_json::to_string(&ExplanationRecord::from(&plain)).unwrap();
        assert!(!text.contains("edge_mask"));
    }

    proptest! {
        #[test]
        fn cardinality_is_exact(scores in prop::collection::vec(-10.0f64..10.0, 1..40), p in 0.01f64..=1.0) {
            let mask = top_p_mask(&scores, p).unwrap();
            let ones = mask.iter().filter(|&&b| b).count();
            prop_assert_eq!(ones, (p * scores.len() as f64 - 1e-9 * (p * scores.len() as f64).max(1.0)).ceil() as usize);
            // every kept |score| dominates every dropped one
            let kept_min = scores.iter().zip(&mask).filter(|(_, &k)| k).map(|(s, _)| s.abs()).fold(f64::INFINITY, f64::min);
            let dropped_max = scores.iter().zip(&mask).filter(|(_, &k)| !k).map(|(s, _)| s.abs()).fold(0.0, f64::max);
            prop_assert!(kept_min >= dropped_max);
        }
    }
}
