//! Norm and Lipschitz constants of a trained model.
//!
//! Everything here is evaluated in `f64` regardless of the model's scalar
//! type; bound verification always runs in double precision.

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::gnn::model::GnnModel;
use crate::linalg::{spectral_norm, Matrix};
use crate::scalar::{vector_p_norm, Scalar};

/// Activation constants and weight spectral norms, with the products that
/// bound how far the softmax output can move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProfile {
    /// Softmax Lipschitz constant.
    pub c_softmax: f64,
    /// Softplus Lipschitz constant per layer.
    pub c_softplus: Vec<f64>,
    pub self_norms: Vec<f64>,
    pub neighbor_norms: Vec<f64>,
    pub classifier_norm: f64,
    /// `C_fc ‖W_fc‖₂ ∏ C_l ‖W_a^l‖₂`
    pub gamma11: f64,
    /// `C_fc ‖W_fc‖₂ ∏ C_l ‖W_n^l‖₂`
    pub gamma12: f64,
    /// False if any power iteration hit its iteration cap.
    pub converged: bool,
}

fn norm_of<T: Scalar>(m: &Matrix<T>, converged: &mut bool) -> f64 {
    let s = spectral_norm(&m.cast::<f64>());
    *converged &= s.converged;
    s.value
}

pub fn lipschitz_profile<T: Scalar>(model: &GnnModel<T>) -> LipschitzProfile {
    let mut converged = true;
    let self_norms: Vec<f64> = model
        .layers
        .iter()
        .map(|l| norm_of(&l.self_weight, &mut converged))
        .collect();
    let neighbor_norms: Vec<f64> = model
        .layers
        .iter()
        .map(|l| norm_of(&l.neighbor_weight, &mut converged))
        .collect();
    let classifier_norm = norm_of(&model.classifier, &mut converged);
    let c_softmax = 1.0;
    let c_softplus = vec![1.0; model.layer_count()];
    let chain = |norms: &[f64]| -> f64 {
        norms
            .iter()
            .zip(&c_softplus)
            .fold(c_softmax * classifier_norm, |acc, (n, c)| acc * c * n)
    };
    let gamma11 = chain(&self_norms);
    let gamma12 = chain(&neighbor_norms);
    LipschitzProfile {
        c_softmax,
        c_softplus,
        self_norms,
        neighbor_norms,
        classifier_norm,
        gamma11,
        gamma12,
        converged,
    }
}

impl LipschitzProfile {
    /// Recomputes the products from the stored norms and checks them against
    /// the stored values.
    pub fn check(&self) -> Result<()> {
        let chain = |norms: &[f64]| -> f64 {
            norms
                .iter()
                .zip(&self.c_softplus)
                .fold(self.c_softmax * self.classifier_norm, |acc, (n, c)| acc * c * n)
        };
        let all = [self.gamma11, self.gamma12, self.classifier_norm]
            .into_iter()
            .chain(self.self_norms.iter().copied())
            .chain(self.neighbor_norms.iter().copied());
        if all.clone().any(|x| !(x >= 0.0) || !x.is_finite()) {
            return Err(ProbeError::Degenerate("negative or non-finite Lipschitz constant".into()));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1.0);
        if !close(chain(&self.self_norms), self.gamma11) || !close(chain(&self.neighbor_norms), self.gamma12) {
            return Err(ProbeError::Degenerate("Lipschitz products out of sync with norms".into()));
        }
        Ok(())
    }
}

/// The weight-only part of the gradient constant for a matrix `p`-norm:
/// `‖W_fcᵀ‖_p ∏_l ‖W_a^l‖_p ‖(W_a¹)ᵀ‖_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientConstant {
    pub p: f64,
    pub classifier_t: f64,
    pub self_norms: Vec<f64>,
    pub first_self_t: f64,
    pub weight_product: f64,
}

pub fn gradient_constant<T: Scalar>(model: &GnnModel<T>, p: f64) -> Result<GradientConstant> {
    let m: GnnModel<f64> = model.cast();
    let classifier_t = m.classifier.transpose().operator_norm(p)?;
    let self_norms = m
        .layers
        .iter()
        .map(|l| l.self_weight.operator_norm(p))
        .collect::<Result<Vec<f64>>>()?;
    let first_self_t = m.layers[0].self_weight.transpose().operator_norm(p)?;
    let weight_product = classifier_t * self_norms.iter().product::<f64>() * first_self_t;
    Ok(GradientConstant {
        p,
        classifier_t,
        self_norms,
        first_self_t,
        weight_product,
    })
}

impl GradientConstant {
    /// `γ₃ = ‖y − ŷ‖_p · weight_product` for the one-hot of `label` and the
    /// softmax output `probs`.
    pub fn gamma3<T: Scalar>(&self, probs: &[T], label: usize) -> f64 {
        let residual: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(c, &q)| if c == label { 1.0 } else { 0.0 } - q.to_f64_lossy())
            .collect();
        vector_p_norm(&residual, self.p) * self.weight_product
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::{Architecture, GnnLayer};
    use crate::rng::seeded;

    fn identity_model(m: usize, layers: usize) -> GnnModel<f64> {
        GnnModel::from_parts(
            (0..layers)
                .map(|_| GnnLayer {
                    self_weight: Matrix::identity(m),
                    neighbor_weight: Matrix::identity(m),
                })
                .collect(),
            Matrix::identity(m),
            vec![0.0; m],
        )
        .unwrap()
    }

    #[test]
    fn identity_weights_give_unit_constants() {
        let p = lipschitz_profile(&identity_model(3, 2));
        assert!((p.gamma11 - 1.0).abs() < 1e-12);
        assert!((p.gamma12 - 1.0).abs() < 1e-12);
        p.check().unwrap();
    }

    #[test]
    fn doubling_classifier_doubles_products() {
        let mut model = GnnModel::<f64>::init(&Architecture::uniform(4, 5, 2, 2), &mut seeded(8)).unwrap();
        let a = lipschitz_profile(&model);
        let g3a = gradient_constant(&model, 2.0).unwrap();
        model.classifier = model.classifier.scale(2.0);
        let b = lipschitz_profile(&model);
        let g3b = gradient_constant(&model, 2.0).unwrap();
        assert!((b.gamma11 - 2.0 * a.gamma11).abs() < 1e-10 * a.gamma11);
        assert!((b.gamma12 - 2.0 * a.gamma12).abs() < 1e-10 * a.gamma12);
        assert!((g3b.weight_product - 2.0 * g3a.weight_product).abs() < 1e-10 * g3a.weight_product);
    }

    #[test]
    fn gamma3_vanishes_at_exact_prediction() {
        let g = gradient_constant(&identity_model(2, 2), 2.0).unwrap();
        assert_eq!(g.gamma3(&[1.0f64, 0.0], 0), 0.0);
        assert!((g.gamma3(&[0.5f64, 0.5], 0) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn infinity_norm_is_max_row_sum() {
        let m = GnnModel::from_parts(
            vec![GnnLayer {
                self_weight: Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.5]]).unwrap(),
                neighbor_weight: Matrix::zeros(2, 2),
            }],
            Matrix::identity(2),
            vec![0.0, 0.0],
        )
        .unwrap();
        let g = gradient_constant(&m, f64::INFINITY).unwrap();
        assert_eq!(g.self_norms, vec![3.0]);
        assert_eq!(g.first_self_t, 2.5);
    }
}
