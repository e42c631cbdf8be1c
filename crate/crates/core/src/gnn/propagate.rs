//! Forward and reverse-mode passes of the message-passing model over a
//! [`ComputationSubgraph`].
//!
//! The same pass serves plain inference, full-batch training, input
//! gradients and the mask-learning explainers. Messages can be scaled per
//! undirected edge (soft edge masks) and gated per directed message with a
//! learned baseline (GraphMASK-style erasure).

use crate::error::{ProbeError, Result};
use crate::gnn::model::GnnModel;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::subgraph::{ComputationSubgraph, UNREACHABLE};

/// Which node states to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Only what the target's output depends on: layer `l` is computed for
    /// nodes within `L - l` hops.
    Target,
    /// Every node at every layer (full-batch training, surrogate sampling).
    All,
}

/// Optional message modifiers.
#[derive(Clone, Copy, Debug, Default)]
pub struct Messages<'a, T> {
    /// Multiplier per undirected subgraph edge, applied in both directions
    /// at every layer.
    pub edge_weights: Option<&'a [T]>,
    /// Per GNN layer, one gate per directed message slot (see
    /// [`slot_offsets`]). The message from `v` to `u` becomes
    /// `g·h_v + (1 − g)·α`.
    pub gates: Option<&'a [Vec<T>]>,
    /// Per GNN layer, the baseline `α` of the gated messages.
    pub baselines: Option<&'a [Vec<T>]>,
}

/// Prefix offsets so that the message into local node `i` from its `k`-th
/// adjacency entry has slot `offsets[i] + k`. The last entry is the slot count.
pub fn slot_offsets<T: Scalar>(sub: &ComputationSubgraph<T>) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sub.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for list in sub.adjacency() {
        acc += list.len();
        offsets.push(acc);
    }
    offsets
}

/// Intermediate states. `hidden` is indexed `[l][i]` for `l = 1..=L`; layer 0
/// lives in `input` and `hidden[0]` is an empty placeholder, so read states
/// through [`Propagation::state`]. `pre` and `aggregated` are indexed by GNN
/// layer `l = 1..=L` at position `l - 1`. Inactive nodes hold empty vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation<T> {
    pub scope: Scope,
    pub active: Vec<Vec<bool>>,
    pub input: Matrix<T>,
    pub hidden: Vec<Vec<Vec<T>>>,
    pub pre: Vec<Vec<Vec<T>>>,
    pub aggregated: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Propagation<T> {
    /// `h^l` of local node `i`; `l = 0` is the feature row.
    pub fn state(&self, l: usize, i: usize) -> &[T] {
        if l == 0 {
            self.input.row(i)
        } else {
            &self.hidden[l][i]
        }
    }
}

fn active_sets<T: Scalar>(sub: &ComputationSubgraph<T>, layers: usize, scope: Scope) -> Vec<Vec<bool>> {
    (0..=layers)
        .map(|l| match scope {
            Scope::All => vec![true; sub.len()],
            Scope::Target => sub
                .distances()
                .iter()
                .map(|&d| d != UNREACHABLE && d + l <= layers)
                .collect(),
        })
        .collect()
}

pub fn propagate<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    messages: Messages<'_, T>,
    scope: Scope,
) -> Result<Propagation<T>> {
    let layers = model.layer_count();
    if sub.feature_dim() != model.feature_dim() {
        return Err(ProbeError::DimensionMismatch(format!(
            "subgraph has {} features, model expects {}",
            sub.feature_dim(),
            model.feature_dim()
        )));
    }
    if scope == Scope::Target && sub.hop_count() < layers {
        return Err(ProbeError::InvalidParameter(format!(
            "subgraph covers {} hops, model has {layers} layers",
            sub.hop_count()
        )));
    }
    if let Some(w) = messages.edge_weights {
        if w.len() != sub.edges().len() {
            return Err(ProbeError::DimensionMismatch("one edge weight per subgraph edge".into()));
        }
    }
    let offsets = slot_offsets(sub);
    if let Some(g) = messages.gates {
        if g.len() != layers || g.iter().any(|v| v.len() != offsets[sub.len()]) {
            return Err(ProbeError::DimensionMismatch("one gate per layer and message slot".into()));
        }
        match messages.baselines {
            Some(b) if b.len() == layers && (0..layers).all(|l| b[l].len() == model.width(l)) => {}
            _ => return Err(ProbeError::DimensionMismatch("gated messages need per-layer baselines".into())),
        }
    }
    let active = active_sets(sub, layers, scope);
    let n = sub.len();
    let input = sub.features().clone();
    let mut hidden: Vec<Vec<Vec<T>>> = Vec::with_capacity(layers + 1);
    hidden.push(vec![Vec::new(); n]);
    let mut pre = Vec::with_capacity(layers);
    let mut aggregated = Vec::with_capacity(layers);
    for l in 1..=layers {
        let layer = &model.layers[l - 1];
        let in_width = model.width(l - 1);
        let prev = |j: usize| if l == 1 { input.row(j) } else { hidden[l - 1][j].as_slice() };
        let mut a_l = vec![Vec::new(); n];
        let mut h_l = vec![Vec::new(); n];
        let mut agg_l = vec![Vec::new(); n];
        for i in 0..n {
            if !active[l][i] {
                continue;
            }
            let mut agg = vec![T::zero(); in_width];
            for (k, &(j, e)) in sub.adjacency()[i].iter().enumerate() {
                let w = messages.edge_weights.map_or(T::one(), |w| w[e]);
                if w == T::zero() {
                    continue;
                }
                match (messages.gates, messages.baselines) {
                    (Some(g), Some(b)) => {
                        let gate = g[l - 1][offsets[i] + k];
                        let one_minus = T::one() - gate;
                        for ((acc, &hv), &base) in agg.iter_mut().zip(prev(j)).zip(&b[l - 1]) {
                            *acc += w * (gate * hv + one_minus * base);
                        }
                    }
                    _ => {
                        for (acc, &hv) in agg.iter_mut().zip(prev(j)) {
                            *acc += w * hv;
                        }
                    }
                }
            }
            let mut a = layer.self_weight.matvec(prev(i));
            layer.neighbor_weight.matvec_acc(&agg, &mut a);
            h_l[i] = a.iter().map(|&x| x.softplus()).collect();
            a_l[i] = a;
            agg_l[i] = agg;
        }
        pre.push(a_l);
        aggregated.push(agg_l);
        hidden.push(h_l);
    }
    Ok(Propagation {
        scope,
        active,
        input,
        hidden,
        pre,
        aggregated,
    })
}

/// Gradients produced by [`backpropagate`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// Same shape as the model; `None` unless requested.
    pub model: Option<GnnModel<T>>,
    /// `∂loss/∂X`, one row per subgraph node.
    pub features: Matrix<T>,
    /// `∂loss/∂w_e` per undirected edge (zero when no weights were given).
    pub edge_weights: Vec<T>,
    /// `∂loss/∂g` per layer and slot (empty when ungated).
    pub gates: Vec<Vec<T>>,
    /// `∂loss/∂α` per layer (empty when ungated).
    pub baselines: Vec<Vec<T>>,
    /// `∂loss/∂h^l` per layer `l ≥ 1` and node; layer 0 is `features`.
    pub hidden: Vec<Vec<Vec<T>>>,
}

/// `∂loss/∂h^l` row of node `i`, with layer 0 stored in `features`.
fn layer_grad<'a, T: Scalar>(features: &'a mut Matrix<T>, d_hidden: &'a mut [Vec<Vec<T>>], l: usize, i: usize) -> &'a mut [T] {
    if l == 0 {
        features.row_mut(i)
    } else {
        &mut d_hidden[l][i]
    }
}

/// Reverse pass. `seeds` holds `(local node, ∂loss/∂logits)` pairs.
pub fn backpropagate<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    messages: Messages<'_, T>,
    prop: &Propagation<T>,
    seeds: &[(usize, Vec<T>)],
    want_params: bool,
) -> Gradients<T> {
    let layers = model.layer_count();
    let n = sub.len();
    let offsets = slot_offsets(sub);
    let gated = messages.gates.is_some() && messages.baselines.is_some();
    let mut grads_model = if want_params { Some(model.zeros_like()) } else { None };
    let mut d_edge = vec![T::zero(); sub.edges().len()];
    let mut d_gates: Vec<Vec<T>> = if gated {
        vec![vec![T::zero(); offsets[n]]; layers]
    } else {
        Vec::new()
    };
    let mut d_base: Vec<Vec<T>> = if gated {
        (0..layers).map(|l| vec![T::zero(); model.width(l)]).collect()
    } else {
        Vec::new()
    };

    let mut features = Matrix::zeros(n, model.feature_dim());
    let mut d_hidden: Vec<Vec<Vec<T>>> = (0..=layers)
        .map(|l| {
            (0..n)
                .map(|i| {
                    if l > 0 && prop.active[l][i] {
                        vec![T::zero(); model.width(l)]
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect();
    for (i, dlogit) in seeds {
        let top = &prop.hidden[layers][*i];
        model.classifier.matvec_t_acc(dlogit, &mut d_hidden[layers][*i]);
        if let Some(g) = grads_model.as_mut() {
            g.classifier.add_outer(dlogit, top);
            for (b, &d) in g.bias.iter_mut().zip(dlogit) {
                *b += d;
            }
        }
    }
    for l in (1..=layers).rev() {
        let layer = &model.layers[l - 1];
        let in_width = model.width(l - 1);
        for i in 0..n {
            if !prop.active[l][i] {
                continue;
            }
            let dh = &d_hidden[l][i];
            if dh.iter().all(|&x| x == T::zero()) {
                continue;
            }
            let da: Vec<T> = dh
                .iter()
                .zip(&prop.pre[l - 1][i])
                .map(|(&d, &a)| d * a.sigmoid())
                .collect();
            if let Some(g) = grads_model.as_mut() {
                g.layers[l - 1].self_weight.add_outer(&da, prop.state(l - 1, i));
                g.layers[l - 1].neighbor_weight.add_outer(&da, &prop.aggregated[l - 1][i]);
            }
            let d_below = d_hidden.split_at_mut(l).0;
            let mut d_self = vec![T::zero(); in_width];
            layer.self_weight.matvec_t_acc(&da, &mut d_self);
            for (acc, d) in layer_grad(&mut features, d_below, l - 1, i).iter_mut().zip(d_self) {
                *acc += d;
            }
            let d_agg = layer.neighbor_weight.matvec_t(&da);
            for (k, &(j, e)) in sub.adjacency()[i].iter().enumerate() {
                let w = messages.edge_weights.map_or(T::one(), |w| w[e]);
                let hv = prop.state(l - 1, j);
                let d_j = layer_grad(&mut features, d_below, l - 1, j);
                if gated {
                    let gate = messages.gates.expect("gated")[l - 1][offsets[i] + k];
                    let base = &messages.baselines.expect("gated")[l - 1];
                    let mut d_w = T::zero();
                    let mut d_g = T::zero();
                    for c in 0..in_width {
                        let msg = gate * hv[c] + (T::one() - gate) * base[c];
                        d_w += d_agg[c] * msg;
                        d_g += d_agg[c] * w * (hv[c] - base[c]);
                        d_base[l - 1][c] += d_agg[c] * w * (T::one() - gate);
                        d_j[c] += d_agg[c] * w * gate;
                    }
                    d_edge[e] += d_w;
                    d_gates[l - 1][offsets[i] + k] += d_g;
                } else {
                    let mut d_w = T::zero();
                    for c in 0..in_width {
                        d_w += d_agg[c] * hv[c];
                        d_j[c] += d_agg[c] * w;
                    }
                    d_edge[e] += d_w;
                }
            }
        }
    }
    Gradients {
        model: grads_model,
        features,
        edge_weights: d_edge,
        gates: d_gates,
        baselines: d_base,
        hidden: d_hidden,
    }
}

/// Cross-entropy of `probs` against class `label` and its logit gradient
/// `ŷ − y`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> (T, Vec<T>) {
    let loss = -probs[label].max(T::min_positive_value()).ln();
    let mut grad = probs.to_vec();
    grad[label] -= T::one();
    (loss, grad)
}
