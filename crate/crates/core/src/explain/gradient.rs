//! Gradient attributions: vanilla input gradients and integrated gradients.

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::{backpropagate, forward, input_gradient, GnnModel, Messages};
use crate::scalar::Scalar;
use crate::subgraph::ComputationSubgraph;

/// CE gradient at the target, labelled with the model's own prediction.
pub fn vanilla_grad<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>, p: f64) -> Result<Explanation<T>> {
    let label = forward(model, sub)?.prediction();
    let scores = input_gradient(model, sub, label)?;
    Explanation::node_feature(sub.target(), super::Method::VanillaGrad.tag(), p, scores)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: Baseline,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            baseline: Baseline::Zeros,
        }
    }
}

/// Gradient of logit `class` with respect to the target's features.
pub fn logit_gradient<T: Scalar>(model: &GnnModel<T>, sub: &ComputationSubgraph<T>, class: usize) -> Result<Vec<T>> {
    let trace = forward(model, sub)?;
    let mut seed = vec![T::zero(); model.class_count()];
    seed[class] = T::one();
    let grads = backpropagate(
        model,
        sub,
        Messages::default(),
        &trace.propagation,
        &[(trace.target_local, seed)],
        false,
    );
    Ok(grads.features.row(trace.target_local).to_vec())
}

/// Midpoint Riemann approximation of `(x − x̃) ∘ ∫₀¹ ∇f(x̃ + α(x − x̃)) dα`.
pub fn integrate_path<T: Scalar>(
    x: &[T],
    baseline: &[T],
    steps: usize,
    mut grad: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(ProbeError::InvalidParameter("integrated gradients needs at least one step".into()));
    }
    let delta: Vec<T> = x.iter().zip(baseline).map(|(&a, &b)| a - b).collect();
    let mut acc = vec![T::zero(); x.len()];
    let n = T::from_usize_lossy(steps);
    for i in 0..steps {
        let alpha = (T::from_usize_lossy(i) + T::lit(0.5)) / n;
        let point: Vec<T> = baseline.iter().zip(&delta).map(|(&b, &d)| b + alpha * d).collect();
        for (a, g) in acc.iter_mut().zip(grad(&point)?) {
            *a += g;
        }
    }
    Ok(acc.iter().zip(&delta).map(|(&a, &d)| a / n * d).collect())
}

/// Integrated gradients of the predicted-class logit along the straight path
/// from the baseline to the target's features, neighbors held fixed.
pub fn integrated_gradients<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    config: &IgConfig,
    p: f64,
) -> Result<Explanation<T>> {
    let class = forward(model, sub)?.prediction();
    let x = sub.target_features().to_vec();
    let base = match config.baseline {
        Baseline::Zeros => vec![T::zero(); x.len()],
        Baseline::Ones => vec![T::one(); x.len()],
    };
    let scores = integrate_path(&x, &base, config.steps, |point| {
        logit_gradient(model, &sub.with_target_features(point), class)
    })?;
    Explanation::node_feature(sub.target(), super::Method::IntegratedGradients.tag(), p, scores)
}
