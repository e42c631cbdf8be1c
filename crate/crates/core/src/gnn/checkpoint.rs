//! JSON checkpoints. Weights are stored row-major as decimal strings using
//! the shortest representation that parses back to the same `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::gnn::model::{Architecture, GnnLayer, GnnModel};
use crate::gnn::train::TrainConfig;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(rename = "W_a")]
    pub self_weight: Vec<String>,
    #[serde(rename = "W_n")]
    pub neighbor_weight: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    /// `[M, H_1, .., H_L, C]`
    pub dims: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    #[serde(rename = "W_fc")]
    pub classifier: Vec<String>,
    pub b: Vec<String>,
    pub seed: u64,
    pub train_config: TrainConfig,
}

fn encode<T: Scalar>(xs: &[T]) -> Vec<String> {
    xs.iter().map(|x| format!("{:?}", x.to_f64_lossy())).collect()
}

fn decode(xs: &[String], rows: usize, cols: usize, what: &str) -> Result<Matrix<f64>> {
    if xs.len() != rows * cols {
        return Err(ProbeError::DimensionMismatch(format!(
            "{what}: {} entries for a {rows}x{cols} matrix",
            xs.len()
        )));
    }
    let data = xs
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| ProbeError::Parse(format!("{what}: {s:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Matrix::from_vec(rows, cols, data)
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &GnnModel<T>, seed: u64, train_config: &TrainConfig) -> Self {
        let arch = model.architecture();
        let mut dims = arch.widths.clone();
        dims.push(arch.class_count);
        Self {
            dims,
            layers: model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    self_weight: encode(l.self_weight.as_slice()),
                    neighbor_weight: encode(l.neighbor_weight.as_slice()),
                })
                .collect(),
            classifier: encode(model.classifier.as_slice()),
            b: encode(&model.bias),
            seed,
            train_config: train_config.clone(),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        if self.dims.len() < 3 {
            return Err(ProbeError::DimensionMismatch("dims needs input, hidden and class sizes".into()));
        }
        let (widths, c) = self.dims.split_at(self.dims.len() - 1);
        Ok(Architecture {
            widths: widths.to_vec(),
            class_count: c[0],
        })
    }

    pub fn to_model<T: Scalar>(&self) -> Result<GnnModel<T>> {
        let arch = self.architecture()?;
        if self.layers.len() != arch.layer_count() {
            return Err(ProbeError::DimensionMismatch(format!(
                "{} layer records for {} layers",
                self.layers.len(),
                arch.layer_count()
            )));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, rec)| {
                let (r, c) = (arch.widths[l + 1], arch.widths[l]);
                Ok(GnnLayer {
                    self_weight: decode(&rec.self_weight, r, c, "W_a")?.cast(),
                    neighbor_weight: decode(&rec.neighbor_weight, r, c, "W_n")?.cast(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let last = *arch.widths.last().expect("non-empty");
        let classifier = decode(&self.classifier, arch.class_count, last, "W_fc")?.cast();
        let bias = decode(&self.b, 1, arch.class_count, "b")?
            .as_slice()
            .iter()
            .map(|&x| T::lit(x))
            .collect();
        GnnModel::from_parts(layers, classifier, bias)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
