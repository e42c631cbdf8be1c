//! GNNExplainer-style joint feature and edge mask optimization.

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::{backpropagate, cross_entropy, forward, forward_with, GnnModel, Messages};
use crate::scalar::Scalar;
use crate::subgraph::ComputationSubgraph;

/// Shared by the mask-learning explainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskOptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub size_weight: f64,
    pub entropy_weight: f64,
    /// PGExplainer: starting temperature.
    pub temperature_start: f64,
    /// PGExplainer: final temperature.
    pub temperature_end: f64,
    /// PGExplainer: concrete samples per node and step.
    pub sample_count: usize,
    /// PGExplainer: at most this many training nodes.
    pub max_train_nodes: usize,
    /// PGExplainer: hidden width of the edge scorer.
    pub hidden_dim: usize,
}

impl Default for MaskOptConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 0.01,
            size_weight: 0.005,
            entropy_weight: 0.1,
            temperature_start: 1.0,
            temperature_end: 0.5,
            sample_count: 16,
            max_train_nodes: 32,
            hidden_dim: 32,
        }
    }
}

impl MaskOptConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.size_weight >= 0.0
            && self.entropy_weight >= 0.0
            && self.temperature_start > 0.0
            && self.temperature_end > 0.0
            && self.sample_count > 0
            && self.hidden_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(ProbeError::InvalidParameter(format!("invalid mask optimization config {self:?}")))
        }
    }
}

/// Binary entropy of `σ(m)` in nats.
fn entropy<T: Scalar>(s: T) -> T {
    let tiny = T::min_positive_value();
    let one = T::one();
    -(s * s.max(tiny).ln() + (one - s) * (one - s).max(tiny).ln())
}

/// Result of the optimization, before binarization.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskFit<T> {
    pub feature_logits: Vec<T>,
    pub edge_logits: Vec<T>,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<T>,
}

struct Problem<'a, T> {
    model: &'a GnnModel<T>,
    sub: &'a ComputationSubgraph<T>,
    label: usize,
    edge_ids: Vec<usize>,
    size: T,
    entropy: T,
}

impl<T: Scalar> Problem<'_, T> {
    fn masked(&self, mf: &[T], me: &[T]) -> (ComputationSubgraph<T>, Vec<T>) {
        let x: Vec<T> = self
            .sub
            .target_features()
            .iter()
            .zip(mf)
            .map(|(&x, &m)| x * m.sigmoid())
            .collect();
        let mut weights = vec![T::one(); self.sub.edges().len()];
        for (&e, &m) in self.edge_ids.iter().zip(me) {
            weights[e] = m.sigmoid();
        }
        (self.sub.with_target_features(&x), weights)
    }

    fn objective(&self, mf: &[T], me: &[T]) -> Result<T> {
        let (s, w) = self.masked(mf, me);
        let msg = Messages {
            edge_weights: Some(&w),
            ..Messages::default()
        };
        let trace = forward_with(self.model, &s, msg)?;
        let (ce, _) = cross_entropy(&trace.probs, self.label);
        Ok(ce + self.regularizer(mf) + self.regularizer(me))
    }

    fn regularizer(&self, m: &[T]) -> T {
        m.iter()
            .map(|&v| {
                let s = v.sigmoid();
                self.size * s + self.entropy * entropy(s)
            })
            .sum()
    }

    fn gradient(&self, mf: &[T], me: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (s, w) = self.masked(mf, me);
        let msg = Messages {
            edge_weights: Some(&w),
            ..Messages::default()
        };
        let trace = forward_with(self.model, &s, msg)?;
        let (_, d) = cross_entropy(&trace.probs, self.label);
        let g = backpropagate(self.model, &s, msg, &trace.propagation, &[(trace.target_local, d)], false);
        let x = self.sub.target_features();
        let reg = |m: T| {
            let s = m.sigmoid();
            let ds = s * (T::one() - s);
            // d entropy / dm = −m σ(m)(1 − σ(m))
            self.size * ds - self.entropy * m * ds
        };
        let gf = mf
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let ds = m.sigmoid() * (T::one() - m.sigmoid());
                g.features[(trace.target_local, j)] * x[j] * ds + reg(m)
            })
            .collect();
        let ge = me
            .iter()
            .zip(&self.edge_ids)
            .map(|(&m, &e)| {
                let ds = m.sigmoid() * (T::one() - m.sigmoid());
                g.edge_weights[e] * ds + reg(m)
            })
            .collect();
        Ok((gf, ge))
    }
}

/// Gradient descent from zero logits with halving backtracking: a step is
/// accepted only if it does not increase the objective.
pub fn fit_masks<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    config: &MaskOptConfig,
) -> Result<MaskFit<T>> {
    config.validate()?;
    let label = forward(model, sub)?.prediction();
    let problem = Problem {
        model,
        sub,
        label,
        edge_ids: sub.target_edge_indices(),
        size: T::lit(config.size_weight),
        entropy: T::lit(config.entropy_weight),
    };
    let mut mf = vec![T::zero(); sub.feature_dim()];
    let mut me = vec![T::zero(); problem.edge_ids.len()];
    let mut current = problem.objective(&mf, &me)?;
    let mut trace = vec![current];
    for step in 0..config.steps {
        let (gf, ge) = problem.gradient(&mf, &me)?;
        if gf.iter().chain(&ge).any(|g| !g.is_finite()) {
            return Err(ProbeError::Diverged(step));
        }
        let mut lr = T::lit(config.learning_rate);
        let mut accepted = false;
        for _ in 0..30 {
            let nf: Vec<T> = mf.iter().zip(&gf).map(|(&m, &g)| m - lr * g).collect();
            let ne: Vec<T> = me.iter().zip(&ge).map(|(&m, &g)| m - lr * g).collect();
            let value = problem.objective(&nf, &ne)?;
            if value <= current {
                mf = nf;
                me = ne;
                current = value;
                accepted = true;
                break;
            }
            lr *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
        trace.push(current);
    }
    Ok(MaskFit {
        feature_logits: mf,
        edge_logits: me,
        objective_trace: trace,
    })
}

/// Feature and edge importances `σ(m)`, binarized by top-p.
pub fn gnnexplainer<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    config: &MaskOptConfig,
    p: f64,
) -> Result<Explanation<T>> {
    let fit = fit_masks(model, sub, config)?;
    Explanation::both(
        sub.target(),
        super::Method::GnnExplainer.tag(),
        p,
        fit.feature_logits.iter().map(|m| m.sigmoid()).collect(),
        sub.target_neighbors(),
        fit.edge_logits.iter().map(|m| m.sigmoid()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::Architecture;
    use crate::graph::{random_graph, Graph};
    use crate::rng::seeded;
    use crate::subgraph::computation_subgraph;

    fn setup() -> (GnnModel<f64>, ComputationSubgraph<f64>) {
        let g: Graph<f64> = random_graph(12, 4, 2, 0.3, 41).unwrap();
        let model = GnnModel::init(&Architecture::uniform(4, 5, 2, 2), &mut seeded(42)).unwrap();
        (model, computation_subgraph(&g, 2, 2).unwrap())
    }

    #[test]
    fn zero_steps_gives_half_scores() {
        let (model, sub) = setup();
        let cfg = MaskOptConfig {
            steps: 0,
            ..MaskOptConfig::default()
        };
        let e = gnnexplainer(&model, &sub, &cfg, 0.25).unwrap();
        assert!(e.node_scores.as_ref().unwrap().iter().all(|&s| s == 0.5));
        assert_eq!(e.node_mask.unwrap(), vec![true, false, false, false]);
    }

    #[test]
    fn objective_never_increases() {
        let (model, sub) = setup();
        let cfg = MaskOptConfig {
            steps: 100,
            learning_rate: 0.5,
            ..MaskOptConfig::default()
        };
        let fit = fit_masks(&model, &sub, &cfg).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (model, sub) = setup();
        let problem = Problem {
            model: &model,
            sub: &sub,
            label: 1,
            edge_ids: sub.target_edge_indices(),
            size: 0.005,
            entropy: 0.1,
        };
        let mf = vec![0.3, -0.2, 0.8, 0.1];
        let me: Vec<f64> = (0..problem.edge_ids.len()).map(|i| 0.2 * i as f64 - 0.3).collect();
        let (gf, ge) = problem.gradient(&mf, &me).unwrap();
        let h = 1e-6;
        for j in 0..mf.len() {
            let mut a = mf.clone();
            let mut b = mf.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (problem.objective(&a, &me).unwrap() - problem.objective(&b, &me).unwrap()) / (2.0 * h);
            assert!((fd - gf[j]).abs() < 1e-6, "feature {j}: {fd} vs {}", gf[j]);
        }
        for k in 0..me.len() {
            let mut a = me.clone();
            let mut b = me.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (problem.objective(&mf, &a).unwrap() - problem.objective(&mf, &b).unwrap()) / (2.0 * h);
            assert!((fd - ge[k]).abs() < 1e-6, "edge {k}: {fd} vs {}", ge[k]);
        }
    }
}
