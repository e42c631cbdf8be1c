//! PGExplainer-style amortized edge masks: a small perceptron maps the final
//! embeddings of an edge's endpoints to a logit `ω`, trained through the
//! concrete relaxation `ê = σ((log ε − log(1 − ε) + ω) / ρ)`.

use rand::Rng;

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::train::Adam;
use crate::gnn::{backpropagate, cross_entropy, forward, forward_with, propagate, GnnModel, Messages, Scope};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};
use crate::subgraph::{computation_subgraph, subgraph_with_target_override, ComputationSubgraph};

use super::gnnexplainer::MaskOptConfig;

/// `ω(c) = w₂ · softplus(W₁ c + b₁) + b₂` over `c = [h_u^L ; h_v^L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScorer<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Scalar> EdgeScorer<T> {
    fn hidden(&self, c: &[T]) -> Vec<T> {
        let mut a = self.b1.clone();
        self.w1.matvec_acc(c, &mut a);
        a
    }

    pub fn omega(&self, c: &[T]) -> T {
        let a = self.hidden(c);
        let s: Vec<T> = a.iter().map(|x| x.softplus()).collect();
        dot(&self.w2, &s) + self.b2
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = self.w1.as_slice().to_vec();
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    fn assign(&mut self, params: &[T]) {
        let n1 = self.w1.as_slice().len();
        let d = self.b1.len();
        self.w1.as_mut_slice().copy_from_slice(&params[..n1]);
        self.b1.copy_from_slice(&params[n1..n1 + d]);
        self.w2.copy_from_slice(&params[n1 + d..n1 + 2 * d]);
        self.b2 = params[n1 + 2 * d];
    }

    /// Adds `dω · ∂ω/∂θ` to `grad` (same layout as `flatten`).
    fn accumulate(&self, c: &[T], d_omega: T, grad: &mut [T]) {
        let a = self.hidden(c);
        let n1 = self.w1.as_slice().len();
        let d = self.b1.len();
        let cols = self.w1.cols();
        for r in 0..d {
            grad[n1 + d + r] += d_omega * a[r].softplus();
            let da = d_omega * self.w2[r] * a[r].sigmoid();
            grad[n1 + r] += da;
            for k in 0..cols {
                grad[r * cols + k] += da * c[k];
            }
        }
        grad[n1 + 2 * d] += d_omega;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgExplainer<T> {
    pub scorer: EdgeScorer<T>,
    pub config: MaskOptConfig,
    /// Temperature used by the deterministic readout.
    pub temperature: f64,
    /// Mean sampled objective before each update.
    pub loss_trace: Vec<f64>,
    pub train_nodes: Vec<usize>,
}

/// Relaxed edge weight for logit `omega`, noise `eps` and temperature `rho`.
pub fn concrete_weight<T: Scalar>(omega: T, eps: T, rho: T) -> T {
    ((eps.ln() - (T::one() - eps).ln() + omega) / rho).sigmoid()
}

struct TrainItem<T> {
    sub: ComputationSubgraph<T>,
    label: usize,
    edge_ids: Vec<usize>,
    inputs: Vec<Vec<T>>,
}

fn edge_inputs<T: Scalar>(embeddings: &[Vec<T>], u: usize, neighbors: &[usize]) -> Vec<Vec<T>> {
    neighbors
        .iter()
        .map(|&v| {
            let mut c = embeddings[u].clone();
            c.extend_from_slice(&embeddings[v]);
            c
        })
        .collect()
}

/// Trains the scorer on the non-isolated nodes of `nodes`.
pub fn pgexplainer_train<T: Scalar, R: Rng + ?Sized>(
    model: &GnnModel<T>,
    graph: &Graph<T>,
    nodes: &[usize],
    config: &MaskOptConfig,
    rng: &mut R,
) -> Result<PgExplainer<T>> {
    config.validate()?;
    let layers = model.layer_count();
    let view = crate::subgraph::whole_graph(graph, layers)?;
    let prop = propagate(model, &view, Messages::default(), Scope::All)?;
    let embeddings = &prop.hidden[layers];
    let mut items = Vec::new();
    for &u in nodes {
        if items.len() >= config.max_train_nodes {
            break;
        }
        if graph.neighbors(u).is_empty() {
            continue;
        }
        let sub = computation_subgraph(graph, u, layers)?;
        let label = forward(model, &sub)?.prediction();
        let neighbors = sub.target_neighbors();
        items.push(TrainItem {
            label,
            edge_ids: sub.target_edge_indices(),
            inputs: edge_inputs(embeddings, u, &neighbors),
            sub,
        });
    }
    if items.is_empty() {
        return Err(ProbeError::InvalidParameter("PGExplainer needs a training node with edges".into()));
    }
    let width = model.width(layers);
    let mut scorer = EdgeScorer {
        w1: Matrix::uniform_fan_in(config.hidden_dim, 2 * width, rng),
        b1: vec![T::zero(); config.hidden_dim],
        w2: Matrix::<T>::uniform_fan_in(1, config.hidden_dim, rng).as_slice().to_vec(),
        b2: T::zero(),
    };
    let mut params = scorer.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate, 0.9, 0.999, 1e-8);
    let size = T::lit(config.size_weight);
    let ent = T::lit(config.entropy_weight);
    let samples = T::from_usize_lossy(config.sample_count);
    let scale = T::one() / (samples * T::from_usize_lossy(items.len()));
    let tiny = 1e-6;
    let mut loss_trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let frac = if config.steps > 1 {
            step as f64 / (config.steps - 1) as f64
        } else {
            1.0
        };
        let rho = T::lit(config.temperature_start + (config.temperature_end - config.temperature_start) * frac);
        let mut grad = vec![T::zero(); params.len()];
        let mut total = T::zero();
        for item in &items {
            let omegas: Vec<T> = item.inputs.iter().map(|c| scorer.omega(c)).collect();
            let mut d_omega = vec![T::zero(); omegas.len()];
            for _ in 0..config.sample_count {
                let mut weights = vec![T::one(); item.sub.edges().len()];
                let mut e_hat = Vec::with_capacity(omegas.len());
                for (&om, &e) in omegas.iter().zip(&item.edge_ids) {
                    let eps = T::lit(rng.gen_range(tiny..1.0 - tiny));
                    let w = concrete_weight(om, eps, rho);
                    weights[e] = w;
                    e_hat.push(w);
                }
                let msg = Messages {
                    edge_weights: Some(&weights),
                    ..Messages::default()
                };
                let trace = forward_with(model, &item.sub, msg)?;
                let (ce, d) = cross_entropy(&trace.probs, item.label);
                let g = backpropagate(model, &item.sub, msg, &trace.propagation, &[(trace.target_local, d)], false);
                total += ce;
                for (k, (&w, &e)) in e_hat.iter().zip(&item.edge_ids).enumerate() {
                    let wc = w.max(T::lit(tiny)).min(T::lit(1.0 - tiny));
                    let h = -(wc * wc.ln() + (T::one() - wc) * (T::one() - wc).ln());
                    total += size * w + ent * h;
                    let d_reg = size + ent * ((T::one() - wc) / wc).ln();
                    d_omega[k] += (g.edge_weights[e] + d_reg) * w * (T::one() - w) / rho;
                }
            }
            for (c, &dw) in item.inputs.iter().zip(&d_omega) {
                scorer.accumulate(c, dw * scale, &mut grad);
            }
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(ProbeError::Diverged(step));
        }
        loss_trace.push(mean.to_f64_lossy());
        adam.step(&mut params, &grad);
        scorer.assign(&params);
    }
    Ok(PgExplainer {
        scorer,
        temperature: config.temperature_end,
        config: config.clone(),
        loss_trace,
        train_nodes: items.iter().map(|i| i.sub.target()).collect(),
    })
}

impl<T: Scalar> PgExplainer<T> {
    /// `ω` for every target-incident edge, in `target_neighbors` order.
    pub fn omegas(&self, model: &GnnModel<T>, graph: &Graph<T>, sub: &ComputationSubgraph<T>) -> Result<Vec<T>> {
        let layers = model.layer_count();
        let u = sub.target();
        let neighbors = sub.target_neighbors();
        // one extra hop makes the neighbors' final embeddings exact
        let wide = subgraph_with_target_override(graph, u, layers + 1, sub.target_features(), &neighbors)?;
        let prop = propagate(model, &wide, Messages::default(), Scope::All)?;
        let top = &prop.hidden[layers];
        let local = |g: usize| wide.local_index(g).expect("neighbor inside the wider subgraph");
        let hu = &top[local(u)];
        Ok(neighbors
            .iter()
            .map(|&v| {
                let mut c = hu.clone();
                c.extend_from_slice(&top[local(v)]);
                self.scorer.omega(&c)
            })
            .collect())
    }
}

/// Deterministic readout `σ(ω/ρ)`, i.e. the relaxation at `ε = 1/2`.
pub fn pgexplainer_explain<T: Scalar>(
    pg: &PgExplainer<T>,
    model: &GnnModel<T>,
    graph: &Graph<T>,
    sub: &ComputationSubgraph<T>,
    p: f64,
) -> Result<Explanation<T>> {
    let neighbors = sub.target_neighbors();
    if neighbors.is_empty() {
        return Err(ProbeError::IsolatedNode(sub.target()));
    }
    let rho = T::lit(pg.temperature);
    let half = T::lit(0.5);
    let scores = pg
        .omegas(model, graph, sub)?
        .into_iter()
        .map(|om| concrete_weight(om, half, rho))
        .collect();
    Explanation::edge(sub.target(), super::Method::PgExplainer.tag(), p, neighbors, scores)
}
