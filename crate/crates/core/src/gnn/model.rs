use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// One message-passing layer: `h_u = softplus(W_a h_u + W_n Σ_v h_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnLayer<T> {
    pub self_weight: Matrix<T>,
    pub neighbor_weight: Matrix<T>,
}

/// `L` softplus message-passing layers followed by a linear classifier and
/// softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel<T> {
    pub layers: Vec<GnnLayer<T>>,
    pub classifier: Matrix<T>,
    pub bias: Vec<T>,
}

/// Layer widths `[M, H_1, .., H_L]` plus the class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub class_count: usize,
}

impl Architecture {
    pub fn new(feature_dim: usize, hidden: &[usize], class_count: usize) -> Self {
        let mut widths = vec![feature_dim];
        widths.extend_from_slice(hidden);
        Self { widths, class_count }
    }

    /// `layer_count` hidden layers of equal width.
    pub fn uniform(feature_dim: usize, hidden_dim: usize, layer_count: usize, class_count: usize) -> Self {
        Self::new(feature_dim, &vec![hidden_dim; layer_count], class_count)
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

impl<T: Scalar> GnnModel<T> {
    /// Fan-in scaled uniform initialization of every weight; bias uses the
    /// classifier fan-in.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.widths.len() < 2 || arch.widths.contains(&0) || arch.class_count == 0 {
            return Err(ProbeError::InvalidParameter(format!("invalid architecture {arch:?}")));
        }
        let layers = arch
            .widths
            .windows(2)
            .map(|w| GnnLayer {
                self_weight: Matrix::uniform_fan_in(w[1], w[0], rng),
                neighbor_weight: Matrix::uniform_fan_in(w[1], w[0], rng),
            })
            .collect();
        let last = *arch.widths.last().expect("non-empty");
        let classifier = Matrix::uniform_fan_in(arch.class_count, last, rng);
        let bound = 1.0 / (last as f64).sqrt();
        let bias = (0..arch.class_count)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        Ok(Self {
            layers,
            classifier,
            bias,
        })
    }

    pub fn from_parts(layers: Vec<GnnLayer<T>>, classifier: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        let model = Self {
            layers,
            classifier,
            bias,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ProbeError::DimensionMismatch("model needs at least one layer".into()));
        }
        let mut width = self.layers[0].self_weight.cols();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.self_weight.cols() != width || layer.neighbor_weight.shape() != layer.self_weight.shape() {
                return Err(ProbeError::DimensionMismatch(format!(
                    "layer {l}: self {:?}, neighbor {:?}, expected input width {width}",
                    layer.self_weight.shape(),
                    layer.neighbor_weight.shape()
                )));
            }
            width = layer.self_weight.rows();
        }
        if self.classifier.cols() != width || self.bias.len() != self.classifier.rows() {
            return Err(ProbeError::DimensionMismatch(format!(
                "classifier {:?} with bias {} after width {width}",
                self.classifier.shape(),
                self.bias.len()
            )));
        }
        if !self.flatten().iter().all(|x| x.is_finite()) {
            return Err(ProbeError::InvalidParameter("non-finite model weight".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.layers[0].self_weight.cols()];
        widths.extend(self.layers.iter().map(|l| l.self_weight.rows()));
        Architecture {
            widths,
            class_count: self.class_count(),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].self_weight.cols()
    }

    pub fn class_count(&self) -> usize {
        self.classifier.rows()
    }

    /// Width of `h^l` (`l = 0` is the input).
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.feature_dim()
        } else {
            self.layers[l - 1].self_weight.rows()
        }
    }

    pub fn logits(&self, hidden: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        self.classifier.matvec_acc(hidden, &mut out);
        out
    }

    /// Same architecture, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GnnLayer {
                    self_weight: Matrix::zeros(l.self_weight.rows(), l.self_weight.cols()),
                    neighbor_weight: Matrix::zeros(l.neighbor_weight.rows(), l.neighbor_weight.cols()),
                })
                .collect(),
            classifier: Matrix::zeros(self.classifier.rows(), self.classifier.cols()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.self_weight.as_slice().len() + l.neighbor_weight.as_slice().len())
            .sum::<usize>()
            + self.classifier.as_slice().len()
            + self.bias.len()
    }

    /// All parameters in a fixed order: per layer `W_a`, `W_n`; then `W_fc`, `b`.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.self_weight.as_slice());
            out.extend_from_slice(l.neighbor_weight.as_slice());
        }
        out.extend_from_slice(self.classifier.as_slice());
        out.extend_from_slice(&self.bias);
        out
    }

    /// Inverse of [`Self::flatten`].
    pub fn assign(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        let mut take = |dst: &mut [T]| {
            dst.copy_from_slice(&params[offset..offset + dst.len()]);
            offset += dst.len();
        };
        for l in &mut self.layers {
            take(l.self_weight.as_mut_slice());
            take(l.neighbor_weight.as_mut_slice());
        }
        take(self.classifier.as_mut_slice());
        take(&mut self.bias);
    }

    pub fn cast<U: Scalar>(&self) -> GnnModel<U> {
        GnnModel {
            layers: self
                .layers
                .iter()
                .map(|l| GnnLayer {
                    self_weight: l.self_weight.cast(),
                    neighbor_weight: l.neighbor_weight.cast(),
                })
                .collect(),
            classifier: self.classifier.cast(),
            bias: self.bias.iter().map(|b| U::lit(b.to_f64_lossy())).collect(),
        }
    }
}
