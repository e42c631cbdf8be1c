//! Undirected attributed graphs, CSV ingestion and synthetic generation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::linalg::Matrix;
use crate::rng::{seeded, stream, Stream};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    features: Matrix<T>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    labels: Vec<usize>,
    class_count: usize,
    sensitive_index: Option<usize>,
    train_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

/// Stratified train/test split: `train_ratio` of every class goes to train,
/// the rest to test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.5,
            seed: 0,
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Validates and normalizes the edge list (endpoints ordered, sorted,
    /// deduplicated).
    pub fn new(
        features: Matrix<T>,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        class_count: usize,
        sensitive_index: Option<usize>,
        train_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 || features.cols() == 0 {
            return Err(ProbeError::DimensionMismatch(
                "graph needs at least one node and one feature".into(),
            ));
        }
        if labels.len() != n {
            return Err(ProbeError::DimensionMismatch(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(ProbeError::InvalidParameter("class_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(ProbeError::InvalidParameter(format!(
                "label {bad} outside 0..{class_count}"
            )));
        }
        if train_mask.len() != n || test_mask.len() != n {
            return Err(ProbeError::DimensionMismatch("split masks must have one entry per node".into()));
        }
        if train_mask.iter().zip(&test_mask).any(|(&a, &b)| a && b) {
            return Err(ProbeError::InvalidParameter("train and test masks overlap".into()));
        }
        if let Some(s) = sensitive_index {
            if s >= features.cols() {
                return Err(ProbeError::DimensionMismatch(format!(
                    "sensitive column {s} outside 0..{}",
                    features.cols()
                )));
            }
            for row in 0..n {
                let v = features[(row, s)];
                if v != T::zero() && v != T::one() {
                    return Err(ProbeError::NonBinarySensitive {
                        column: s,
                        row,
                        value: v.to_f64_lossy(),
                    });
                }
            }
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(ProbeError::DanglingEdge {
                    src: a,
                    dst: b,
                    node_count: n,
                });
            }
            if a == b {
                return Err(ProbeError::SelfLoop(a));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &normalized {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            features,
            edges: normalized,
            adjacency,
            labels,
            class_count,
            sensitive_index,
            train_mask,
            test_mask,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of `u`.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sensitive_index(&self) -> Option<usize> {
        self.sensitive_index
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.train_mask[i]).collect()
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.test_mask[i]).collect()
    }

    /// Replaces the split with a stratified one drawn from `spec`.
    pub fn with_split(mut self, spec: SplitSpec) -> Result<Self> {
        let (train, test) = stratified_split(&self.labels, self.class_count, spec)?;
        self.train_mask = train;
        self.test_mask = test;
        Ok(self)
    }
}

pub fn stratified_split(labels: &[usize], class_count: usize, spec: SplitSpec) -> Result<(Vec<bool>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&spec.train_ratio) {
        return Err(ProbeError::InvalidParameter(format!(
            "train_ratio {} outside [0, 1]",
            spec.train_ratio
        )));
    }
    let mut rng = stream(spec.seed, Stream::Split);
    let mut train = vec![false; labels.len()];
    for c in 0..class_count {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let take = (spec.train_ratio * members.len() as f64).round() as usize;
        for &i in members.iter().take(take) {
            train[i] = true;
        }
    }
    let test = train.iter().map(|t| !t).collect();
    Ok((train, test))
}

/// Paths to the three CSV inputs of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataset {
    pub features: String,
    pub edges: String,
    pub labels: String,
    #[serde(default)]
    pub sensitive_column: Option<usize>,
}

/// Loads features (header row + one real row per node), edges (`src,dst`
/// header + integer pairs) and labels (one integer per row, optional header).
pub fn load_graph<T: Scalar>(
    features_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    sensitive_column: Option<usize>,
    split: SplitSpec,
) -> Result<Graph<T>> {
    let mut rows = Vec::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(features_path)?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| ProbeError::Parse(format!("features row {i}: {field:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    let features = Matrix::from_rows(&rows)?;

    let mut edges = Vec::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(edges_path)?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ProbeError::DimensionMismatch(format!(
                "edges row {i} has {} columns, expected 2",
                record.len()
            )));
        }
        let parse = |f: &str| {
            f.parse::<usize>()
                .map_err(|e| ProbeError::Parse(format!("edges row {i}: {f:?}: {e}")))
        };
        edges.push((parse(&record[0])?, parse(&record[1])?));
    }

    let mut labels = Vec::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(labels_path)?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or("");
        match field.parse::<usize>() {
            Ok(y) => labels.push(y),
            // A non-numeric first row is a header.
            Err(_) if i == 0 => continue,
            Err(e) => return Err(ProbeError::Parse(format!("labels row {i}: {field:?}: {e}"))),
        }
    }
    if labels.len() != features.rows() {
        return Err(ProbeError::DimensionMismatch(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    let (train, test) = stratified_split(&labels, class_count, split)?;
    Graph::new(features, edges, labels, class_count, sensitive_column, train, test)
}

/// Stochastic block model with Gaussian class-conditional features.
///
/// Class `c` has mean `class_mean_shift` on every non-sensitive feature `j`
/// with `j % class_count == c` and 0 elsewhere; noise is standard normal. The
/// last feature column is the sensitive attribute, Bernoulli with
/// `P(s = 1 | c) = 0.5 ± sensitive_bias` (plus for even classes, minus for odd).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub class_mean_shift: f64,
    pub sensitive_bias: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 150,
            feature_dim: 10,
            class_count: 2,
            intra_edge_prob: 0.1,
            inter_edge_prob: 0.02,
            class_mean_shift: 2.0,
            sensitive_bias: 0.3,
            seed: 1,
        }
    }
}

pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec, split: SplitSpec) -> Result<Graph<T>> {
    let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
    if !prob_ok(spec.intra_edge_prob) || !prob_ok(spec.inter_edge_prob) {
        return Err(ProbeError::InvalidParameter("edge probabilities must lie in [0, 1]".into()));
    }
    if spec.intra_edge_prob < spec.inter_edge_prob {
        return Err(ProbeError::InvalidParameter(
            "intra_edge_prob must be at least inter_edge_prob".into(),
        ));
    }
    if !(0.0..=0.5).contains(&spec.sensitive_bias) {
        return Err(ProbeError::InvalidParameter("sensitive_bias must lie in [0, 0.5]".into()));
    }
    if spec.n_per_class == 0 || spec.class_count == 0 || spec.feature_dim < 2 {
        return Err(ProbeError::InvalidParameter(
            "n_per_class and class_count must be positive and feature_dim at least 2".into(),
        ));
    }
    let mut rng = stream(spec.seed, Stream::Synthetic);
    let n = spec.n_per_class * spec.class_count;
    let m = spec.feature_dim;
    let sensitive = m - 1;
    let labels: Vec<usize> = (0..n).map(|i| i / spec.n_per_class).collect();
    let mut features = Matrix::zeros(n, m);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..sensitive {
            let mean = if j % spec.class_count == c {
                spec.class_mean_shift
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[(i, j)] = T::lit(mean + noise);
        }
        let p_one = if c % 2 == 0 {
            0.5 + spec.sensitive_bias
        } else {
            0.5 - spec.sensitive_bias
        };
        features[(i, sensitive)] = if rng.gen_bool(p_one) { T::one() } else { T::zero() };
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let p = if labels[a] == labels[b] {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if p > 0.0 && rng.gen_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let (train, test) = stratified_split(&labels, spec.class_count, split)?;
    Graph::new(features, edges, labels, spec.class_count, Some(sensitive), train, test)
}

/// Convenience for tests and fixtures: a graph from literal rows with an
/// all-train split.
pub fn graph_from_parts<T: Scalar>(
    rows: &[Vec<f64>],
    edges: &[(usize, usize)],
    labels: &[usize],
    class_count: usize,
    sensitive_index: Option<usize>,
) -> Result<Graph<T>> {
    let rows: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&x| T::lit(x)).collect()).collect();
    let n = rows.len();
    Graph::new(
        Matrix::from_rows(&rows)?,
        edges.to_vec(),
        labels.to_vec(),
        class_count,
        sensitive_index,
        vec![true; n],
        vec![false; n],
    )
}

/// Seeded random graph helper used by fixtures: `n` nodes, `m` standard normal
/// features, edges with probability `edge_prob`.
pub fn random_graph<T: Scalar>(n: usize, m: usize, class_count: usize, edge_prob: f64, seed: u64) -> Result<Graph<T>> {
    let mut rng = seeded(seed);
    let features = Matrix::from_fn(n, m, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen_bool(edge_prob) {
                edges.push((a, b));
            }
        }
    }
    let labels = (0..n).map(|i| i % class_count).collect();
    Graph::new(features, edges, labels, class_count, None, vec![true; n], vec![false; n])
}
