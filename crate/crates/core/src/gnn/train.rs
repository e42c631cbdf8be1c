//! Full-batch training with Adam on the mean cross-entropy of the training
//! nodes.

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::gnn::model::GnnModel;
use crate::gnn::propagate::{backpropagate, cross_entropy, propagate, Messages, Scope};
use crate::graph::Graph;
use crate::scalar::{argmax, softmax, Scalar};
use crate::subgraph::{whole_graph, ComputationSubgraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 penalty added to the gradient (Adam's classic coupled decay).
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ProbeError::InvalidParameter(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: GnnModel<T>,
    /// Mean training cross-entropy before each update.
    pub losses: Vec<T>,
}

/// Adam state over the flattened parameter vector.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr: T::lit(lr),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(eps),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mean cross-entropy over `nodes` with its parameter gradient, computed on
/// a whole-graph view.
pub fn loss_and_gradient<T: Scalar>(
    model: &GnnModel<T>,
    view: &ComputationSubgraph<T>,
    nodes: &[usize],
    labels: &[usize],
) -> Result<(T, GnnModel<T>)> {
    let prop = propagate(model, view, Messages::default(), Scope::All)?;
    let scale = T::one() / T::from_usize_lossy(nodes.len());
    let layers = model.layer_count();
    let mut loss = T::zero();
    let mut seeds = Vec::with_capacity(nodes.len());
    for &u in nodes {
        let probs = softmax(&model.logits(&prop.hidden[layers][u]));
        let (l, mut d) = cross_entropy(&probs, labels[u]);
        loss += l * scale;
        d.iter_mut().for_each(|x| *x *= scale);
        seeds.push((u, d));
    }
    let grads = backpropagate(model, view, Messages::default(), &prop, &seeds, true);
    Ok((loss, grads.model.expect("parameter gradients requested")))
}

pub fn train<T: Scalar>(init: &GnnModel<T>, graph: &Graph<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    init.check_shapes()?;
    let nodes = graph.train_nodes();
    for c in 0..graph.class_count() {
        if !nodes.iter().any(|&u| graph.labels()[u] == c) {
            return Err(ProbeError::InvalidParameter(format!("no training node of class {c}")));
        }
    }
    let view = whole_graph(graph, init.layer_count())?;
    let mut model = init.clone();
    let mut params = model.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let decay = T::lit(config.weight_decay);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = loss_and_gradient(&model, &view, &nodes, graph.labels())?;
        if !loss.is_finite() {
            return Err(ProbeError::Diverged(epoch));
        }
        losses.push(loss);
        let mut g = grads.flatten();
        for (gi, &p) in g.iter_mut().zip(&params) {
            *gi += decay * p;
        }
        adam.step(&mut params, &g);
        if !params.iter().all(|p| p.is_finite()) {
            return Err(ProbeError::Diverged(epoch));
        }
        model.assign(&params);
    }
    Ok(TrainOutcome { model, losses })
}

/// Predicted class of every node in `nodes`.
pub fn predict_nodes<T: Scalar>(model: &GnnModel<T>, graph: &Graph<T>, nodes: &[usize]) -> Result<Vec<usize>> {
    let view = whole_graph(graph, model.layer_count())?;
    let prop = propagate(model, &view, Messages::default(), Scope::All)?;
    let top = &prop.hidden[model.layer_count()];
    Ok(nodes.iter().map(|&u| argmax(&model.logits(&top[u]))).collect())
}

/// Fraction of `nodes` whose prediction matches the label.
pub fn accuracy<T: Scalar>(model: &GnnModel<T>, graph: &Graph<T>, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(ProbeError::InvalidParameter("accuracy over no nodes".into()));
    }
    let preds = predict_nodes(model, graph, nodes)?;
    let hits = preds
        .iter()
        .zip(nodes)
        .filter(|(&p, &u)| p == graph.labels()[u])
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}
