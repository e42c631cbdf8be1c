//! GraphLIME: HSIC Lasso on Gaussian Gram matrices over the target's
//! neighborhood.

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::explanation::Explanation;
use crate::gnn::{propagate, GnnModel, Messages, Scope};
use crate::linalg::Matrix;
use crate::scalar::{softmax, Scalar};
use crate::subgraph::ComputationSubgraph;

pub const HSIC_TOL: f64 = 1e-8;
pub const HSIC_MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphLimeConfig {
    /// ℓ₁ weight `ρ`.
    pub rho: f64,
}

impl Default for GraphLimeConfig {
    fn default() -> Self {
        Self { rho: 0.01 }
    }
}

/// Solution of the nonnegative HSIC Lasso.
#[derive(Clone, Debug, PartialEq)]
pub struct HsicSolution {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// `½‖L − Σ β_k K_k‖²_F + ρ‖β‖₁`.
pub fn hsic_objective(target: &Matrix<f64>, grams: &[Matrix<f64>], beta: &[f64], rho: f64) -> f64 {
    let mut resid = target.clone();
    for (k, b) in grams.iter().zip(beta) {
        for (r, &x) in resid.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *r -= b * x;
        }
    }
    let f = resid.frobenius_norm();
    0.5 * f * f + rho * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `β ≥ 0` on the Frobenius normal equations.
pub fn hsic_lasso(target: &Matrix<f64>, grams: &[Matrix<f64>], rho: f64) -> Result<HsicSolution> {
    if rho < 0.0 || !rho.is_finite() {
        return Err(ProbeError::InvalidParameter(format!("rho = {rho}")));
    }
    let m = grams.len();
    if grams.iter().any(|k| k.shape() != target.shape()) {
        return Err(ProbeError::DimensionMismatch("Gram matrices must match the output Gram".into()));
    }
    let gram_of = Matrix::from_fn(m, m, |i, j| grams[i].frobenius_dot(&grams[j]));
    let corr: Vec<f64> = grams.iter().map(|k| k.frobenius_dot(target)).collect();
    let mut beta = vec![0.0; m];
    for sweep in 1..=HSIC_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for k in 0..m {
            let gkk = gram_of[(k, k)];
            let next = if gkk > 0.0 {
                let others: f64 = (0..m).filter(|&j| j != k).map(|j| gram_of[(k, j)] * beta[j]).sum();
                ((corr[k] - rho - others) / gkk).max(0.0)
            } else {
                0.0
            };
            max_change = max_change.max((next - beta[k]).abs());
            beta[k] = next;
        }
        if max_change < HSIC_TOL {
            return Ok(HsicSolution {
                beta,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(HsicSolution {
        beta,
        sweeps: HSIC_MAX_SWEEPS,
        converged: false,
    })
}

/// Median of the values, or `fallback` if it is zero or there are none.
fn median_or(mut values: Vec<f64>, fallback: f64) -> f64 {
    if values.is_empty() {
        return fallback;
    }
    let n = values.len();
    let (below, &mut upper, _) = values.select_nth_unstable_by(n / 2, |a, b| a.partial_cmp(b).expect("finite"));
    let med = if n % 2 == 1 {
        upper
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if med > 0.0 {
        med
    } else {
        fallback
    }
}

/// `exp(−d²/(2σ²))` over all sample pairs.
pub fn gaussian_gram(distance: impl Fn(usize, usize) -> f64, n: usize, sigma: f64) -> Matrix<f64> {
    let denom = 2.0 * sigma * sigma;
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let d = distance(i, j);
            (-(d * d) / denom).exp()
        }
    })
}

/// `H K H / ‖H K H‖_F` with `H = I − 11ᵀ/n`; a zero matrix stays zero.
pub fn center_normalize(k: &Matrix<f64>) -> Matrix<f64> {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| (0..n).map(|i| k[(i, j)]).sum::<f64>() / nf).collect();
    let total = row_means.iter().sum::<f64>() / nf;
    let c = Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + total);
    let norm = c.frobenius_norm();
    if norm > 0.0 {
        c.scale(1.0 / norm)
    } else {
        c
    }
}

/// Everything the surrogate fit produced, kept for the bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLimeArtifacts {
    /// Global ids of the samples (the target and its neighborhood).
    pub samples: Vec<usize>,
    /// Sample features, one row per sample.
    pub inputs: Matrix<f64>,
    /// Softmax output of each sample.
    pub outputs: Matrix<f64>,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Uncentered per-feature Gram matrices (unit diagonal).
    pub feature_grams: Vec<Matrix<f64>>,
    /// Centered, Frobenius-normalized per-feature Gram matrices.
    pub centered_feature_grams: Vec<Matrix<f64>>,
    pub output_gram: Matrix<f64>,
    pub centered_output_gram: Matrix<f64>,
    pub beta: Vec<f64>,
    pub rho: f64,
    pub solution: HsicSolution,
}

impl GraphLimeArtifacts {
    /// Kernels and the HSIC Lasso solution for samples with input rows
    /// `inputs` and model outputs `outputs`.
    pub fn fit(samples: Vec<usize>, inputs: Matrix<f64>, outputs: Matrix<f64>, rho: f64) -> Result<Self> {
        let n = inputs.rows();
        let m = inputs.cols();
        if outputs.rows() != n || samples.len() != n {
            return Err(ProbeError::DimensionMismatch("surrogate samples out of sync".into()));
        }
        if n < 3 {
            return Err(ProbeError::TooFewSamples { needed: 3, have: n });
        }
        let mut feature_diffs = Vec::with_capacity(m * n * (n - 1) / 2);
        let mut output_dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..m {
                    feature_diffs.push((inputs[(i, k)] - inputs[(j, k)]).abs());
                }
                output_dists.push(crate::scalar::dist2(outputs.row(i), outputs.row(j)));
            }
        }
        let sigma_x = median_or(feature_diffs, 1.0);
        let sigma_y = median_or(output_dists, 1.0);

        let feature_grams: Vec<Matrix<f64>> = (0..m)
            .map(|k| gaussian_gram(|i, j| inputs[(i, k)] - inputs[(j, k)], n, sigma_x))
            .collect();
        let output_gram = gaussian_gram(|i, j| crate::scalar::dist2(outputs.row(i), outputs.row(j)), n, sigma_y);
        let centered_feature_grams: Vec<Matrix<f64>> = feature_grams.iter().map(center_normalize).collect();
        let centered_output_gram = center_normalize(&output_gram);
        let solution = hsic_lasso(&centered_output_gram, &centered_feature_grams, rho)?;
        let beta = solution.beta.clone();
        Ok(Self {
            samples,
            inputs,
            outputs,
            sigma_x,
            sigma_y,
            feature_grams,
            centered_feature_grams,
            output_gram,
            centered_output_gram,
            beta,
            rho,
            solution,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// `L − Σ_{j≠k} β_j K^(j)` on the centered, normalized matrices.
    pub fn residual_without(&self, k: usize) -> Matrix<f64> {
        let mut out = self.centered_output_gram.clone();
        for (j, (g, &b)) in self.centered_feature_grams.iter().zip(&self.beta).enumerate() {
            if j == k || b == 0.0 {
                continue;
            }
            for (o, &x) in out.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *o -= b * x;
            }
        }
        out
    }

    pub fn objective(&self) -> f64 {
        hsic_objective(&self.centered_output_gram, &self.centered_feature_grams, &self.beta, self.rho)
    }
}

/// Builds the kernels, solves for `β` and returns the explanation.
pub fn graphlime<T: Scalar>(
    model: &GnnModel<T>,
    sub: &ComputationSubgraph<T>,
    config: &GraphLimeConfig,
    p: f64,
) -> Result<(Explanation<T>, GraphLimeArtifacts)> {
    let n = sub.len();
    let prop = propagate(model, sub, Messages::default(), Scope::All)?;
    let top = &prop.hidden[model.layer_count()];
    let mut outputs = Matrix::zeros(n, model.class_count());
    for i in 0..n {
        let probs = softmax(&model.logits(&top[i]));
        for (c, q) in probs.into_iter().enumerate() {
            outputs[(i, c)] = q.to_f64_lossy();
        }
    }
    let inputs: Matrix<f64> = sub.features().cast();
    let artifacts = GraphLimeArtifacts::fit(sub.nodes().to_vec(), inputs, outputs, config.rho)?;
    let scores = artifacts.beta.iter().map(|&b| T::lit(b)).collect();
    let explanation = Explanation::node_feature(sub.target(), super::Method::GraphLime.tag(), p, scores)?;
    Ok((explanation, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::Architecture;
    use crate::graph::{random_graph, Graph};
    use crate::rng::seeded;
    use crate::subgraph::computation_subgraph;

    fn toy_gram(values: &[f64]) -> Matrix<f64> {
        center_normalize(&gaussian_gram(|i, j| values[i] - values[j], values.len(), 1.0))
    }

    #[test]
    fn exact_fit_recovers_unit_coefficient() {
        let k = toy_gram(&[0.1, 0.7, -0.4, 1.3]);
        let sol = hsic_lasso(&k, std::slice::from_ref(&k), 0.0).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn large_rho_zeroes_everything() {
        let l = toy_gram(&[0.0, 1.0, 2.0, 0.5]);
        let grams = vec![toy_gram(&[0.3, 0.1, 0.9, 0.2]), toy_gram(&[1.0, -1.0, 0.0, 0.4])];
        let rho = 1e3 * l.frobenius_norm();
        assert!(hsic_lasso(&l, &grams, rho).unwrap().beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn centered_gram_rows_sum_to_zero() {
        let c = toy_gram(&[0.2, 0.5, 0.9, 1.4, -0.3]);
        for i in 0..5 {
            assert!(c.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        assert!((c.frobenius_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn explanation_on_small_graph() {
        let g: Graph<f64> = random_graph(12, 4, 2, 0.35, 21).unwrap();
        let model = GnnModel::init(&Architecture::uniform(4, 5, 2, 2), &mut seeded(3)).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        let (e, art) = graphlime(&model, &s, &GraphLimeConfig::default(), 0.25).unwrap();
        assert!(art.beta.iter().all(|&b| b >= 0.0));
        assert!(art.objective() <= hsic_objective(&art.centered_output_gram, &art.centered_feature_grams, &[0.0; 4], art.rho) + 1e-9);
        for k in &art.feature_grams {
            for i in 0..k.rows() {
                assert_eq!(k[(i, i)], 1.0);
                for j in 0..k.rows() {
                    assert_eq!(k[(i, j)], k[(j, i)]);
                }
            }
        }
        assert_eq!(e.node_mask.unwrap().iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn too_few_samples() {
        let g: Graph<f64> = crate::graph::graph_from_parts(&[vec![1.0], vec![2.0]], &[(0, 1)], &[0, 1], 2, None).unwrap();
        let model = GnnModel::init(&Architecture::uniform(1, 2, 2, 2), &mut seeded(3)).unwrap();
        let s = computation_subgraph(&g, 0, 2).unwrap();
        assert!(matches!(
            graphlime(&model, &s, &GraphLimeConfig::default(), 0.5),
            Err(ProbeError::TooFewSamples { needed: 3, have: 2 })
        ));
    }
}
