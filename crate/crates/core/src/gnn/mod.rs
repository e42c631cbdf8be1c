//! The softplus message-passing GNN: inference, training, input gradients
//! and the Lipschitz constants of its weights.

pub mod checkpoint;
pub mod lipschitz;
pub mod model;
pub mod propagate;
pub mod train;

pub use model::{Architecture, GnnLayer, GnnModel};
pub use propagate::{backpropagate, cross_entropy, propagate, slot_offsets, Gradients, Messages, Propagation, Scope};

use crate::error::{ProbeError, Result};
use crate::scalar::{argmax, softmax, Scalar};
use crate::subgraph::ComputationSubgraph;

/// Everything computed on the way to the target's prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub target_local: usize,
    pub propagation: Propagation<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn prediction(&self) -> usize {
        argmax(&self.probs)
    }

    /// `h^l` of a local node (`l = 0` is the raw feature row).
    pub fn hidden(&self, layer: usize, local: usize) -> &[T] {
        self.propagation.state(layer, local)
    }

    /// Pre-activation `a^l` of a local node, `l ≥ 1`.
    pub fn pre_activation(&self, layer: usize, local: usize) -> &[T] {
        &self.propagation.pre[layer - 1][local]
    }
}

pub fn forward<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>) -> Result<ForwardTrace<T>> {
    forward_with(model, sub, Messages::default())
}

pub fn forward_with<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    messages: Messages<'_, T>,
) -> Result<ForwardTrace<T>> {
    let propagation = propagate(model, sub, messages, Scope::Target)?;
    let t = sub.target_local();
    let logits = model.logits(&propagation.hidden[model.layer_count()][t]);
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        target_local: t,
        propagation,
        logits,
        probs,
    })
}

/// Softmax output for the subgraph's target.
pub fn predict_proba<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>) -> Result<Vec<T>> {
    Ok(forward(model, sub)?.probs)
}

/// Gradient of the cross-entropy at the target with respect to the target's
/// own features, other nodes' features held fixed.
pub fn input_gradient<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>, label: usize) -> Result<Vec<T>> {
    if label >= model.class_count() {
        return Err(ProbeError::InvalidParameter(format!(
            "label {label} outside 0..{}",
            model.class_count()
        )));
    }
    let trace = forward(model, sub)?;
    let (_, dlogits) = cross_entropy(&trace.probs, label);
    let grads = backpropagate(
        model,
        sub,
        Messages::default(),
        &trace.propagation,
        &[(trace.target_local, dlogits)],
        false,
    );
    Ok(grads.features.row(trace.target_local).to_vec())
}

/// `q^l_{u,v} = [h_u^l ; h_v^l]` for a neighbor `v` of the target, `l` in
/// `0..L`.
pub fn concatenated_embedding<T: Scalar>(
    trace: &ForwardTrace<T>,
    sub: &ComputationSubgraph<T>,
    neighbor: usize,
    layer: usize,
) -> Result<Vec<T>> {
    let layers = trace.propagation.hidden.len() - 1;
    if layer >= layers {
        return Err(ProbeError::InvalidParameter(format!("layer {layer} outside 0..{layers}")));
    }
    let t = trace.target_local;
    let v = sub
        .local_index(neighbor)
        .filter(|&j| sub.adjacency()[t].iter().any(|&(k, _)| k == j))
        .ok_or(ProbeError::NotNeighbor(neighbor))?;
    let mut q = trace.hidden(layer, t).to_vec();
    q.extend_from_slice(trace.hidden(layer, v));
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{graph_from_parts, random_graph};
    use crate::linalg::Matrix;
    use crate::rng::seeded;
    use crate::subgraph::computation_subgraph;

    fn zero_model(m: usize, h: usize, c: usize) -> GnnModel<f64> {
        let mut model = GnnModel::init(&Architecture::uniform(m, h, 2, c), &mut seeded(0)).unwrap();
        let zeros = vec![0.0; model.param_count()];
        model.assign(&zeros);
        model
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let g: crate::graph::Graph<f64> = random_graph(5, 3, 2, 0.5, 1).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        let trace = forward(&zero_model(3, 4, 2), &s).unwrap();
        assert_eq!(trace.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn isolated_node_aggregates_nothing() {
        let rows = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        let g: crate::graph::Graph<f64> = graph_from_parts(&rows, &[], &[0, 1], 2, None).unwrap();
        let model = GnnModel::init(&Architecture::uniform(2, 3, 2, 2), &mut seeded(5)).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        let trace = forward(&model, &s).unwrap();
        for agg in &trace.propagation.aggregated {
            assert!(agg[0].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn path_graph_matches_straight_line_evaluation() {
        let rows = vec![vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]];
        let g: crate::graph::Graph<f64> = graph_from_parts(&rows, &[(0, 1), (1, 2)], &[0, 1, 0], 2, None).unwrap();
        let model = GnnModel::init(&Architecture::uniform(2, 3, 2, 2), &mut seeded(11)).unwrap();
        let s = computation_subgraph(&g, 1, 2).unwrap();
        let trace = forward(&model, &s).unwrap();

        // Independent evaluation with explicit loops.
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let lin = |w: &Matrix<f64>, x: &[f64]| -> Vec<f64> {
            (0..w.rows()).map(|i| (0..w.cols()).map(|j| w[(i, j)] * x[j]).sum()).collect()
        };
        let layer = |l: usize, hs: &[f64], nb: &[&[f64]]| -> Vec<f64> {
            let mut agg = vec![0.0; hs.len()];
            for v in nb {
                for c in 0..hs.len() {
                    agg[c] += v[c];
                }
            }
            let a = lin(&model.layers[l].self_weight, hs);
            let b = lin(&model.layers[l].neighbor_weight, &agg);
            a.iter().zip(&b).map(|(x, y)| sp(x + y)).collect()
        };
        let h1: Vec<Vec<f64>> = vec![
            layer(0, &rows[0], &[&rows[1]]),
            layer(0, &rows[1], &[&rows[0], &rows[2]]),
            layer(0, &rows[2], &[&rows[1]]),
        ];
        let h2 = layer(1, &h1[1], &[&h1[0], &h1[2]]);
        let mut logits = lin(&model.classifier, &h2);
        for (z, b) in logits.iter_mut().zip(&model.bias) {
            *z += b;
        }
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
        let tot: f64 = e.iter().sum();
        for c in 0..2 {
            assert!((trace.probs[c] - e[c] / tot).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let g: crate::graph::Graph<f64> = random_graph(12, 4, 3, 0.3, 2).unwrap();
        let model = GnnModel::init(&Architecture::uniform(4, 5, 2, 3), &mut seeded(3)).unwrap();
        for u in 0..12 {
            let p = predict_proba(&model, &computation_subgraph(&g, u, 2).unwrap()).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn input_gradient_vanishes_at_perfect_prediction() {
        let g: crate::graph::Graph<f64> = random_graph(5, 3, 2, 0.5, 1).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        let mut model = zero_model(3, 4, 2);
        // A huge bias drives ŷ to an exact one-hot in double precision.
        model.bias = vec![1000.0, -1000.0];
        let grad = input_gradient(&model, &s, 0).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn input_gradient_zero_without_first_self_weight() {
        // With W_a¹ = 0 and W_n = 0 the target's features do not reach the output.
        let g: crate::graph::Graph<f64> = random_graph(6, 3, 2, 0.5, 4).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        let mut model = GnnModel::init(&Architecture::uniform(3, 4, 2, 2), &mut seeded(9)).unwrap();
        model.layers[0].self_weight = Matrix::zeros(4, 3);
        model.layers[0].neighbor_weight = Matrix::zeros(4, 3);
        let grad = input_gradient(&model, &s, 1).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concatenated_embedding_layer_zero_is_raw_features() {
        let rows = vec![vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]];
        let g: crate::graph::Graph<f64> = graph_from_parts(&rows, &[(0, 1), (1, 2)], &[0, 1, 0], 2, None).unwrap();
        let model = GnnModel::init(&Architecture::uniform(2, 3, 2, 2), &mut seeded(11)).unwrap();
        let s = computation_subgraph(&g, 1, 2).unwrap();
        let trace = forward(&model, &s).unwrap();
        let q = concatenated_embedding(&trace, &s, 2, 0).unwrap();
        assert_eq!(q, vec![1.1, 0.4, -0.7, 0.9]);
        assert_eq!(concatenated_embedding(&trace, &s, 0, 1).unwrap().len(), 6);
        assert!(matches!(concatenated_embedding(&trace, &s, 1, 0), Err(ProbeError::NotNeighbor(1))));
    }
}
