//! L-hop computation subgraphs and the operations that edit them: sensitive
//! attribute flips and explanation masking.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const UNREACHABLE: usize = usize::MAX;

/// The part of a graph that determines the prediction for `target` under an
/// `hop_count`-layer message-passing model.
///
/// Nodes are stored in ascending global index; `features` rows follow that
/// order. `edges` holds every graph edge with both endpoints inside `nodes`.
///
/// The topology is shared between copies, so feature edits clone only the
/// feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputationSubgraph<T> {
    target: usize,
    features: Matrix<T>,
    hop_count: usize,
    topology: Arc<Topology>,
}

#[derive(Debug, PartialEq)]
struct Topology {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    distances: Vec<usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl<T: Scalar> ComputationSubgraph<T> {
    /// Assembles a subgraph from global node ids, global edges and per-node
    /// features, recomputing local adjacency and hop distances.
    pub fn from_parts(
        target: usize,
        nodes: Vec<usize>,
        mut edges: Vec<(usize, usize)>,
        features: Matrix<T>,
        hop_count: usize,
    ) -> Result<Self> {
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(ProbeError::InvalidParameter("subgraph nodes must be strictly ascending".into()));
        }
        if features.rows() != nodes.len() {
            return Err(ProbeError::DimensionMismatch(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                nodes.len()
            )));
        }
        let local = |g: usize| nodes.binary_search(&g).ok();
        let target_local = local(target)
            .ok_or_else(|| ProbeError::InvalidParameter(format!("target {target} not among subgraph nodes")))?;
        for e in &mut edges {
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, &(a, b)) in edges.iter().enumerate() {
            let (la, lb) = match (local(a), local(b)) {
                (Some(la), Some(lb)) if la != lb => (la, lb),
                _ => {
                    return Err(ProbeError::InvalidParameter(format!(
                        "edge ({a}, {b}) does not lie inside the subgraph"
                    )))
                }
            };
            adjacency[la].push((lb, k));
            adjacency[lb].push((la, k));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut distances = vec![UNREACHABLE; nodes.len()];
        distances[target_local] = 0;
        let mut queue = VecDeque::from([target_local]);
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &adjacency[i] {
                if distances[j] == UNREACHABLE {
                    distances[j] = distances[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        Ok(Self {
            target,
            features,
            hop_count,
            topology: Arc::new(Topology {
                nodes,
                edges,
                distances,
                adjacency,
            }),
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_local(&self) -> usize {
        self.topology.nodes.binary_search(&self.target).expect("target is a member")
    }

    pub fn nodes(&self) -> &[usize] {
        &self.topology.nodes
    }

    pub fn len(&self) -> usize {
        self.topology.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.topology.edges
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn hop_count(&self) -> usize {
        self.hop_count
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Hop distance from the target per local node, [`UNREACHABLE`] if none.
    pub fn distances(&self) -> &[usize] {
        &self.topology.distances
    }

    /// Local adjacency: `(neighbor local index, edge index)` per local node.
    pub fn adjacency(&self) -> &[Vec<(usize, usize)>] {
        &self.topology.adjacency
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.topology.nodes.binary_search(&global).ok()
    }

    pub fn target_features(&self) -> &[T] {
        self.features.row(self.target_local())
    }

    /// Global ids of the target's neighbors, ascending.
    pub fn target_neighbors(&self) -> Vec<usize> {
        self.topology.adjacency[self.target_local()]
            .iter()
            .map(|&(j, _)| self.topology.nodes[j])
            .collect()
    }

    /// Edge indices of the target-incident edges, ordered like
    /// [`Self::target_neighbors`].
    pub fn target_edge_indices(&self) -> Vec<usize> {
        self.topology.adjacency[self.target_local()].iter().map(|&(_, k)| k).collect()
    }

    /// Copy with the target's feature row replaced.
    pub fn with_target_features(&self, row: &[T]) -> Self {
        let mut out = self.clone();
        let t = out.target_local();
        out.features.row_mut(t).copy_from_slice(row);
        out
    }

    /// Copy without the listed edges. Nodes stay in place; hop distances are
    /// recomputed, so nodes cut off from the target become unreachable.
    pub fn without_edges(&self, drop: &[(usize, usize)]) -> Self {
        let drop: Vec<(usize, usize)> = drop.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        let edges = self
            .topology
            .edges
            .iter()
            .copied()
            .filter(|e| !drop.contains(e))
            .collect();
        Self::from_parts(self.target, self.topology.nodes.clone(), edges, self.features.clone(), self.hop_count)
            .expect("dropping edges keeps a valid subgraph")
    }
}

/// BFS closure of `u` to depth `hops` with ascending node order.
pub fn computation_subgraph<T: Scalar>(graph: &Graph<T>, u: usize, hops: usize) -> Result<ComputationSubgraph<T>> {
    if u >= graph.node_count() {
        return Err(ProbeError::InvalidParameter(format!(
            "node {u} outside 0..{}",
            graph.node_count()
        )));
    }
    let row = graph.features().row(u).to_vec();
    let neighbors = graph.neighbors(u).to_vec();
    subgraph_with_target_override(graph, u, hops, &row, &neighbors)
}

/// BFS closure of `u` where the target's feature row and neighbor set are
/// replaced; every other node keeps its graph adjacency, except that edges to
/// `u` follow the override.
pub fn subgraph_with_target_override<T: Scalar>(
    graph: &Graph<T>,
    u: usize,
    hops: usize,
    target_row: &[T],
    target_neighbors: &[usize],
) -> Result<ComputationSubgraph<T>> {
    let n = graph.node_count();
    let mut target_nb: Vec<usize> = target_neighbors.to_vec();
    target_nb.sort_unstable();
    target_nb.dedup();
    if let Some(&bad) = target_nb.iter().find(|&&v| v >= n || v == u) {
        return Err(ProbeError::InvalidParameter(format!("invalid target neighbor {bad}")));
    }
    let neighbors_of = |i: usize| -> Vec<usize> {
        if i == u {
            target_nb.clone()
        } else {
            let mut out: Vec<usize> = graph.neighbors(i).iter().copied().filter(|&v| v != u).collect();
            if target_nb.binary_search(&i).is_ok() {
                out.push(u);
            }
            out
        }
    };
    let mut dist = std::collections::BTreeMap::new();
    dist.insert(u, 0usize);
    let mut queue = VecDeque::from([u]);
    while let Some(i) = queue.pop_front() {
        let d = dist[&i];
        if d == hops {
            continue;
        }
        for v in neighbors_of(i) {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(d + 1);
                queue.push_back(v);
            }
        }
    }
    let nodes: Vec<usize> = dist.keys().copied().collect();
    let mut edges = Vec::new();
    for &i in &nodes {
        for v in neighbors_of(i) {
            if i < v && dist.contains_key(&v) {
                edges.push((i, v));
            }
        }
    }
    let m = graph.feature_dim();
    let mut features = Matrix::zeros(nodes.len(), m);
    for (li, &g) in nodes.iter().enumerate() {
        if g == u {
            features.row_mut(li).copy_from_slice(target_row);
        } else {
            features.row_mut(li).copy_from_slice(graph.features().row(g));
        }
    }
    ComputationSubgraph::from_parts(u, nodes, edges, features, hops)
}

/// The whole graph as one subgraph (target 0), for full-batch passes with
/// [`crate::gnn::Scope::All`].
pub fn whole_graph<T: Scalar>(graph: &Graph<T>, hops: usize) -> Result<ComputationSubgraph<T>> {
    if graph.node_count() == 0 {
        return Err(ProbeError::InvalidParameter("empty graph".into()));
    }
    ComputationSubgraph::from_parts(
        0,
        (0..graph.node_count()).collect(),
        graph.edges().to_vec(),
        graph.features().clone(),
        hops,
    )
}

/// Flips the target's binary sensitive feature (0 ↔ 1).
pub fn counterfactual_node<T: Scalar>(
    subgraph: &ComputationSubgraph<T>,
    sensitive_index: Option<usize>,
) -> Result<ComputationSubgraph<T>> {
    let s = sensitive_index.ok_or(ProbeError::SensitiveUnset)?;
    if s >= subgraph.feature_dim() {
        return Err(ProbeError::DimensionMismatch(format!(
            "sensitive column {s} outside 0..{}",
            subgraph.feature_dim()
        )));
    }
    let mut row = subgraph.target_features().to_vec();
    let v = row[s];
    if v != T::zero() && v != T::one() {
        return Err(ProbeError::NonBinarySensitive {
            column: s,
            row: subgraph.target(),
            value: v.to_f64_lossy(),
        });
    }
    row[s] = T::one() - v;
    Ok(subgraph.with_target_features(&row))
}

/// The masking function: target features become `x ∘ r`, target-incident
/// edges whose mask entry is 0 are removed. Absent masks act as all-ones.
///
/// Edge masks are keyed by `(explanation.node, neighbor)`; applied to a
/// subgraph of a different target they remove nothing.
pub fn apply_mask<T: Scalar>(explanation: &Explanation<T>, subgraph: &ComputationSubgraph<T>) -> Result<ComputationSubgraph<T>> {
    let mut out = None;
    if let Some(mask) = &explanation.node_mask {
        if mask.len() != subgraph.feature_dim() {
            return Err(ProbeError::MaskLength {
                expected: subgraph.feature_dim(),
                found: mask.len(),
            });
        }
        let row: Vec<T> = subgraph
            .target_features()
            .iter()
            .zip(mask)
            .map(|(&x, &keep)| if keep { x } else { T::zero() })
            .collect();
        out = Some(subgraph.with_target_features(&row));
    }
    if let Some(mask) = &explanation.edge_mask {
        let neighbors = explanation
            .edge_neighbors
            .as_ref()
            .ok_or(ProbeError::MissingMask("edge"))?;
        if neighbors.len() != mask.len() {
            return Err(ProbeError::MaskLength {
                expected: neighbors.len(),
                found: mask.len(),
            });
        }
        if explanation.node == subgraph.target() {
            let u = subgraph.target();
            let present = subgraph.target_neighbors();
            let drop: Vec<(usize, usize)> = neighbors
                .iter()
                .zip(mask)
                .filter(|&(v, &keep)| !keep && present.binary_search(v).is_ok())
                .map(|(&v, _)| (u, v))
                .collect();
            if !drop.is_empty() {
                let base = out.as_ref().unwrap_or(subgraph);
                out = Some(base.without_edges(&drop));
            }
        }
    }
    Ok(out.unwrap_or_else(|| subgraph.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explanation::{Explanation, ExplanationKind};
    use crate::graph::graph_from_parts;

    fn path4() -> Graph<f64> {
        let rows = vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0], vec![4.0, 1.0]];
        graph_from_parts(&rows, &[(0, 1), (1, 2), (2, 3)], &[0, 1, 0, 1], 2, Some(1)).unwrap()
    }

    fn star(leaves: usize) -> Graph<f64> {
        let rows: Vec<Vec<f64>> = (0..=leaves).map(|i| vec![i as f64, 1.0]).collect();
        let edges: Vec<(usize, usize)> = (1..=leaves).map(|v| (0, v)).collect();
        let labels = vec![0; leaves + 1];
        graph_from_parts(&rows, &edges, &labels, 1, None).unwrap()
    }

    #[test]
    fn isolated_node_subgraph() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let g: Graph<f64> = graph_from_parts(&rows, &[(0, 1)], &[0, 0, 0], 1, None).unwrap();
        let s = computation_subgraph(&g, 2, 2).unwrap();
        assert_eq!(s.nodes(), &[2]);
        assert!(s.edges().is_empty());
    }

    #[test]
    fn path_graph_two_hops() {
        let s = computation_subgraph(&path4(), 0, 2).unwrap();
        assert_eq!(s.nodes(), &[0, 1, 2]);
        assert_eq!(s.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(s.distances(), &[0, 1, 2]);
    }

    #[test]
    fn star_center_one_hop() {
        let s = computation_subgraph(&star(5), 0, 1).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.edges().len(), 5);
        assert_eq!(s.target_neighbors(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn counterfactual_flips_only_sensitive_and_is_involution() {
        let s = computation_subgraph(&path4(), 1, 2).unwrap();
        let cf = counterfactual_node(&s, Some(1)).unwrap();
        assert_eq!(s.target_features(), &[2.0, 1.0]);
        assert_eq!(cf.target_features(), &[2.0, 0.0]);
        for p in [1.0, 2.0, 3.0, f64::INFINITY] {
            let d: Vec<f64> = cf
                .target_features()
                .iter()
                .zip(s.target_features())
                .map(|(a, b)| a - b)
                .collect();
            assert_eq!(crate::scalar::vector_p_norm(&d, p), 1.0);
        }
        assert_eq!(counterfactual_node(&cf, Some(1)).unwrap(), s);
        assert!(matches!(counterfactual_node(&s, None), Err(ProbeError::SensitiveUnset)));
    }

    fn masks(node: usize, node_mask: Option<Vec<bool>>, nb: Vec<usize>, edge_mask: Option<Vec<bool>>) -> Explanation<f64> {
        let kind = match (&node_mask, &edge_mask) {
            (Some(_), Some(_)) => ExplanationKind::Both,
            (Some(_), None) => ExplanationKind::NodeFeature,
            _ => ExplanationKind::Edge,
        };
        Explanation {
            node,
            method: "test".into(),
            p: 1.0,
            kind,
            node_scores: node_mask.as_ref().map(|m| vec![0.0; m.len()]),
            node_mask,
            edge_scores: edge_mask.as_ref().map(|m| vec![0.0; m.len()]),
            edge_neighbors: edge_mask.as_ref().map(|_| nb),
            edge_mask,
            per_layer_edge_scores: None,
        }
    }

    #[test]
    fn full_masks_are_identity() {
        let s = computation_subgraph(&star(5), 0, 2).unwrap();
        let e = masks(0, Some(vec![true; 2]), s.target_neighbors(), Some(vec![true; 5]));
        assert_eq!(apply_mask(&e, &s).unwrap(), s);
    }

    #[test]
    fn zero_node_mask_zeroes_target_only() {
        let s = computation_subgraph(&star(5), 0, 2).unwrap();
        let e = masks(0, Some(vec![false; 2]), vec![], None);
        let m = apply_mask(&e, &s).unwrap();
        assert_eq!(m.target_features(), &[0.0, 0.0]);
        assert_eq!(m.edges(), s.edges());
        assert_eq!(m.features().row(1), s.features().row(1));
    }

    #[test]
    fn edge_mask_removes_neighbor() {
        let s = computation_subgraph(&star(5), 0, 1).unwrap();
        let mut keep = vec![true; 5];
        keep[2] = false;
        let e = masks(0, None, s.target_neighbors(), Some(keep));
        let m = apply_mask(&e, &s).unwrap();
        assert_eq!(m.target_neighbors(), vec![1, 2, 4, 5]);
        assert_eq!(m.distances()[m.local_index(3).unwrap()], UNREACHABLE);
    }

    #[test]
    fn mask_length_mismatch() {
        let s = computation_subgraph(&star(5), 0, 1).unwrap();
        let e = masks(0, Some(vec![true; 3]), vec![], None);
        assert!(matches!(apply_mask(&e, &s), Err(ProbeError::MaskLength { expected: 2, found: 3 })));
    }

    #[test]
    fn target_override_rewires() {
        let g = path4();
        let row = g.features().row(0).to_vec();
        let s = subgraph_with_target_override(&g, 0, 2, &row, &[3]).unwrap();
        assert_eq!(s.nodes(), &[0, 2, 3]);
        assert_eq!(s.edges(), &[(0, 3), (2, 3)]);
    }
}
