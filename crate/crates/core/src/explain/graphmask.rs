//! GraphMASK-style erasure: a per-layer scorer decides, for every message,
//! whether it can be replaced by a learned baseline.
//!
//! The scorer reads `q = [h_u^l ; h_v^l]` from the unmasked model and outputs
//! `z = W₂ softplus(LN(W₁ q))`, where `LN(a) = (a − μ) / ς` uses statistics
//! frozen after training. During training the gate is `σ(z)` and the
//! message from `v` into `u` at GNN layer `l + 1` becomes
//! `σ(z) h_v^l + (1 − σ(z)) α^l`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::train::Adam;
use crate::gnn::{backpropagate, concatenated_embedding, forward, forward_with, slot_offsets, GnnModel, Messages};
use crate::linalg::{spectral_norm, Matrix};
use crate::scalar::{dot, norm2, Scalar};
use crate::subgraph::ComputationSubgraph;

/// Added to the variance before taking `ς`.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErasureConfig {
    /// Width `D` of the scorer's hidden layer.
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `λ`, applied to the mean gate value of each training subgraph.
    pub sparsity_weight: f64,
    /// At most this many training nodes (lowest ids first).
    pub max_train_nodes: usize,
}

impl Default for ErasureConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            epochs: 100,
            learning_rate: 0.01,
            sparsity_weight: 0.01,
            max_train_nodes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErasureLayer<T> {
    /// `D × 2H_l`
    pub w1: Matrix<T>,
    /// Length `D`.
    pub w2: Vec<T>,
    pub mean: Vec<T>,
    /// Per-dimension `ς`, strictly positive.
    pub scale: Vec<T>,
    /// Replacement message `α^l`, length `H_l`.
    pub baseline: Vec<T>,
}

impl<T: Scalar> ErasureLayer<T> {
    pub fn z(&self, q: &[T]) -> T {
        let a = self.w1.matvec(q);
        let s: Vec<T> = a
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&x, &mu), &sd)| ((x - mu) / sd).softplus())
            .collect();
        dot(&self.w2, &s)
    }

    /// `C_SP · ‖1/ς‖₂ · ‖W₂‖₂ · ‖W₁‖₂` with `C_SP = 1`, in double precision.
    pub fn lipschitz(&self) -> f64 {
        let inv: Vec<f64> = self.scale.iter().map(|s| 1.0 / s.to_f64_lossy()).collect();
        let w2: Vec<f64> = self.w2.iter().map(|x| x.to_f64_lossy()).collect();
        norm2(&inv) * norm2(&w2) * spectral_norm(&self.w1.cast::<f64>()).value
    }

    fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.w2.len() + self.baseline.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErasureFunction<T> {
    pub layers: Vec<ErasureLayer<T>>,
    pub config: ErasureConfig,
    /// Mean KL over the training nodes before each update.
    pub kl_trace: Vec<f64>,
    pub train_nodes: Vec<usize>,
}

/// Per-node data that stays fixed while the scorer trains.
struct NodeCache<T> {
    sub: ComputationSubgraph<T>,
    probs: Vec<T>,
    /// Per layer: `(slot, q)` for every message that reaches the target.
    queries: Vec<Vec<(usize, Vec<T>)>>,
    slot_count: usize,
}

fn build_cache<T: Scalar>(model: &GnnModel<T>, sub: ComputationSubgraph<T>) -> Result<NodeCache<T>> {
    let trace = forward(model, &sub)?;
    let offsets = slot_offsets(&sub);
    let layers = model.layer_count();
    let mut queries = vec![Vec::new(); layers];
    for (l, qs) in queries.iter_mut().enumerate() {
        // messages of GNN layer l + 1 go into nodes active at that layer
        for i in 0..sub.len() {
            if !trace.propagation.active[l + 1][i] {
                continue;
            }
            for (k, &(j, _)) in sub.adjacency()[i].iter().enumerate() {
                let mut q = trace.hidden(l, i).to_vec();
                q.extend_from_slice(trace.hidden(l, j));
                qs.push((offsets[i] + k, q));
            }
        }
    }
    Ok(NodeCache {
        probs: trace.probs,
        queries,
        slot_count: offsets[sub.len()],
        sub,
    })
}

fn layer_stats<T: Scalar>(w1: &Matrix<T>, queries: &[&[T]]) -> (Vec<T>, Vec<T>) {
    let d = w1.rows();
    if queries.is_empty() {
        return (vec![T::zero(); d], vec![T::one(); d]);
    }
    let n = T::from_usize_lossy(queries.len());
    let acts: Vec<Vec<T>> = queries.iter().map(|q| w1.matvec(q)).collect();
    let mut mean = vec![T::zero(); d];
    for a in &acts {
        for (m, &x) in mean.iter_mut().zip(a) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for a in &acts {
        for ((v, &x), &m) in var.iter_mut().zip(a).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale = var.into_iter().map(|v| (v / n + T::lit(LAYER_NORM_EPS)).sqrt()).collect();
    (mean, scale)
}

impl<T: Scalar> ErasureFunction<T> {
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w1.as_slice());
            out.extend_from_slice(&l.w2);
            out.extend_from_slice(&l.baseline);
        }
        out
    }

    fn assign(&mut self, params: &[T]) {
        let mut off = 0;
        for l in &mut self.layers {
            for dst in [l.w1.as_mut_slice(), l.w2.as_mut_slice(), l.baseline.as_mut_slice()] {
                dst.copy_from_slice(&params[off..off + dst.len()]);
                off += dst.len();
            }
        }
    }

    fn refresh_stats(&mut self, caches: &[NodeCache<T>]) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let qs: Vec<&[T]> = caches
                .iter()
                .flat_map(|c| c.queries[l].iter().map(|(_, q)| q.as_slice()))
                .collect();
            let (mean, scale) = layer_stats(&layer.w1, &qs);
            layer.mean = mean;
            layer.scale = scale;
        }
    }

    /// Gate logits per layer and slot; slots that cannot reach the target
    /// keep gate 1.
    fn gate_logits(&self, cache: &NodeCache<T>) -> Vec<Vec<(usize, T)>> {
        self.layers
            .iter()
            .zip(&cache.queries)
            .map(|(layer, qs)| qs.iter().map(|(slot, q)| (*slot, layer.z(q))).collect())
            .collect()
    }

    /// KL objective, sparsity term and accumulated gradient for one node.
    fn node_step(&self, model: &GnnModel<T>, cache: &NodeCache<T>, grad: &mut [T]) -> Result<T> {
        let logits = self.gate_logits(cache);
        let mut gates = vec![vec![T::one(); cache.slot_count]; self.layers.len()];
        for (l, zs) in logits.iter().enumerate() {
            for &(slot, z) in zs {
                gates[l][slot] = z.sigmoid();
            }
        }
        let baselines: Vec<Vec<T>> = self.layers.iter().map(|l| l.baseline.clone()).collect();
        let messages = Messages {
            edge_weights: None,
            gates: Some(&gates),
            baselines: Some(&baselines),
        };
        let masked = forward_with(model, &cache.sub, messages)?;
        let kl: T = cache
            .probs
            .iter()
            .zip(&masked.probs)
            .map(|(&p, &q)| if p > T::zero() { p * (p / q.max(T::min_positive_value())).ln() } else { T::zero() })
            .sum();
        let dlogits: Vec<T> = masked.probs.iter().zip(&cache.probs).map(|(&q, &p)| q - p).collect();
        let g = backpropagate(
            model,
            &cache.sub,
            messages,
            &masked.propagation,
            &[(masked.target_local, dlogits)],
            false,
        );
        let total_gates: usize = logits.iter().map(Vec::len).sum();
        let lambda = if total_gates > 0 {
            T::lit(self.config.sparsity_weight) / T::from_usize_lossy(total_gates)
        } else {
            T::zero()
        };

        let mut off = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let d = layer.w2.len();
            let w1_len = layer.w1.as_slice().len();
            let cols = layer.w1.cols();
            for ((_, q), &(slot, z)) in cache.queries[l].iter().zip(&logits[l]) {
                let s = z.sigmoid();
                let dz = (g.gates[l][slot] + lambda) * s * (T::one() - s);
                if dz == T::zero() {
                    continue;
                }
                let a = layer.w1.matvec(q);
                for r in 0..d {
                    let n = (a[r] - layer.mean[r]) / layer.scale[r];
                    grad[off + w1_len + r] += dz * n.softplus();
                    let da = dz * layer.w2[r] * n.sigmoid() / layer.scale[r];
                    for c in 0..cols {
                        grad[off + r * cols + c] += da * q[c];
                    }
                }
            }
            for (k, &gb) in g.baselines[l].iter().enumerate() {
                grad[off + w1_len + d + k] += gb;
            }
            off += layer.param_count();
        }
        let sparsity: T = logits.iter().flatten().map(|&(_, z)| z.sigmoid()).sum::<T>() * lambda;
        Ok(kl + sparsity)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `γ₄^l` for erasure layer `l`.
    pub fn gamma4(&self, layer: usize) -> f64 {
        self.layers[layer].lipschitz()
    }

    /// `∏_l γ₄^l`.
    pub fn composed_gamma4(&self) -> f64 {
        self.layers.iter().map(ErasureLayer::lipschitz).product()
    }
}

/// Trains the scorer on `nodes` (already capped by the caller or by
/// `max_train_nodes`), each given by its computation subgraph.
pub fn graphmask_train<T: Scalar, R: Rng + ?Sized>(
    model: &GnnModel<T>,
    subgraphs: Vec<ComputationSubgraph<T>>,
    config: &ErasureConfig,
    rng: &mut R,
) -> Result<ErasureFunction<T>> {
    if config.hidden_dim == 0 || !(config.learning_rate > 0.0) || config.sparsity_weight < 0.0 {
        return Err(ProbeError::InvalidParameter(format!("invalid erasure config {config:?}")));
    }
    if subgraphs.is_empty() {
        return Err(ProbeError::InvalidParameter("erasure training needs at least one node".into()));
    }
    let train_nodes: Vec<usize> = subgraphs.iter().map(ComputationSubgraph::target).collect();
    let caches = subgraphs
        .into_iter()
        .take(config.max_train_nodes.max(1))
        .map(|s| build_cache(model, s))
        .collect::<Result<Vec<_>>>()?;
    let train_nodes = train_nodes[..caches.len()].to_vec();

    let layers = (0..model.layer_count())
        .map(|l| {
            let width = model.width(l);
            let w1 = Matrix::uniform_fan_in(config.hidden_dim, 2 * width, rng);
            let w2 = Matrix::<T>::uniform_fan_in(1, config.hidden_dim, rng).as_slice().to_vec();
            // start from the mean incoming message
            let mut baseline = vec![T::zero(); width];
            let mut count = 0usize;
            for c in &caches {
                for (_, q) in &c.queries[l] {
                    for (b, &x) in baseline.iter_mut().zip(&q[width..]) {
                        *b += x;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                baseline.iter_mut().for_each(|b| *b /= T::from_usize_lossy(count));
            }
            ErasureLayer {
                w1,
                w2,
                mean: vec![T::zero(); config.hidden_dim],
                scale: vec![T::one(); config.hidden_dim],
                baseline,
            }
        })
        .collect();
    let mut erasure = ErasureFunction {
        layers,
        config: config.clone(),
        kl_trace: Vec::with_capacity(config.epochs),
        train_nodes,
    };
    let mut params = erasure.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate, 0.9, 0.999, 1e-8);
    let inv_n = T::one() / T::from_usize_lossy(caches.len());
    for epoch in 0..config.epochs {
        erasure.refresh_stats(&caches);
        let mut grad = vec![T::zero(); params.len()];
        let mut objective = T::zero();
        for c in &caches {
            objective += erasure.node_step(model, c, &mut grad)?;
        }
        let objective = objective * inv_n;
        if !objective.is_finite() {
            return Err(ProbeError::Diverged(epoch));
        }
        erasure.kl_trace.push(objective.to_f64_lossy());
        grad.iter_mut().for_each(|g| *g *= inv_n);
        adam.step(&mut params, &grad);
        erasure.assign(&params);
    }
    erasure.refresh_stats(&caches);
    Ok(erasure)
}

impl<T: Scalar> ErasureFunction<T> {
    /// Mean training objective at the current parameters.
    pub fn objective(&self, model: &GnnModel<T>, subgraphs: &[ComputationSubgraph<T>]) -> Result<f64> {
        let mut total = 0.0;
        for s in subgraphs {
            let cache = build_cache(model, s.clone())?;
            let mut scratch = vec![T::zero(); self.flatten().len()];
            total += self.node_step(model, &cache, &mut scratch)?.to_f64_lossy();
        }
        Ok(total / subgraphs.len() as f64)
    }

    /// Gate probabilities `σ(z)` of every message reaching the target.
    pub fn gate_values(&self, model: &GnnModel<T>, sub: &ComputationSubgraph<T>) -> Result<Vec<Vec<T>>> {
        let cache = build_cache(model, sub.clone())?;
        Ok(self
            .gate_logits(&cache)
            .into_iter()
            .map(|zs| zs.into_iter().map(|(_, z)| z.sigmoid()).collect())
            .collect())
    }
}

/// Raw `z^l` for each target-incident edge and each layer; the last layer's
/// gates `σ(z)` select the top-p edges.
pub fn graphmask_explain<T: Scalar>(
    erasure: &ErasureFunction<T>,
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    p: f64,
) -> Result<Explanation<T>> {
    if erasure.layer_count() != model.layer_count() {
        return Err(ProbeError::DimensionMismatch("erasure trained for a different model depth".into()));
    }
    let neighbors = sub.target_neighbors();
    if neighbors.is_empty() {
        return Err(ProbeError::IsolatedNode(sub.target()));
    }
    let trace = forward(model, sub)?;
    let per_layer = (0..erasure.layer_count())
        .map(|l| {
            neighbors
                .iter()
                .map(|&v| Ok(erasure.layers[l].z(&concatenated_embedding(&trace, sub, v, l)?)))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let last = per_layer.last().expect("at least one layer").clone();
    let gates: Vec<T> = last.iter().map(|z| z.sigmoid()).collect();
    let mut e = Explanation::edge(sub.target(), super::Method::GraphMask.tag(), p, neighbors, gates)?;
    e.edge_scores = Some(last);
    e.per_layer_edge_scores = Some(per_layer);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::Architecture;
    use crate::graph::{random_graph, Graph};
    use crate::rng::seeded;
    use crate::subgraph::computation_subgraph;

    fn setup() -> (Graph<f64>, GnnModel<f64>, Vec<ComputationSubgraph<f64>>) {
        let g: Graph<f64> = random_graph(16, 3, 2, 0.25, 31).unwrap();
        let model = GnnModel::init(&Architecture::uniform(3, 4, 2, 2), &mut seeded(32)).unwrap();
        let subs = (0..8).map(|u| computation_subgraph(&g, u, 2).unwrap()).collect();
        (g, model, subs)
    }

    #[test]
    fn training_does_not_increase_kl_without_sparsity() {
        let (_, model, subs) = setup();
        let cfg = ErasureConfig {
            sparsity_weight: 0.0,
            epochs: 60,
            ..ErasureConfig::default()
        };
        let e = graphmask_train(&model, subs, &cfg, &mut seeded(1)).unwrap();
        assert!(e.kl_trace.last().unwrap() <= e.kl_trace.first().unwrap());
        assert!(e.layers.iter().all(|l| l.scale.iter().all(|&s| s > 0.0)));
    }

    #[test]
    fn training_is_deterministic() {
        let (_, model, subs) = setup();
        let cfg = ErasureConfig {
            epochs: 10,
            ..ErasureConfig::default()
        };
        let a = graphmask_train(&model, subs.clone(), &cfg, &mut seeded(7)).unwrap();
        let b = graphmask_train(&model, subs, &cfg, &mut seeded(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_zero_scores_depend_on_raw_features_only() {
        let (_, model, subs) = setup();
        let cfg = ErasureConfig {
            epochs: 5,
            ..ErasureConfig::default()
        };
        let s = subs.iter().find(|s| !s.target_neighbors().is_empty()).unwrap().clone();
        let e = graphmask_train(&model, subs.clone(), &cfg, &mut seeded(3)).unwrap();
        let expl = graphmask_explain(&e, &model, &s, 0.5).unwrap();
        let z0 = &expl.per_layer_edge_scores.as_ref().unwrap()[0];
        let x = s.target_features().to_vec();
        for (v, &z) in s.target_neighbors().iter().zip(z0) {
            let mut q = x.clone();
            q.extend_from_slice(s.features().row(s.local_index(*v).unwrap()));
            assert_eq!(e.layers[0].z(&q), z);
        }
        assert_eq!(expl, graphmask_explain(&e, &model, &s, 0.5).unwrap());
    }
}
