//! Reliability probes for GNN explanations.

pub mod bounds;
pub mod error;
pub mod explain;
pub mod explanation;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod perturb;
pub mod rng;
pub mod scalar;
pub mod subgraph;

pub use error::{ProbeError, Result};
pub use scalar::Scalar;

pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Model64 = gnn::GnnModel<f64>;
pub type Model32 = gnn::GnnModel<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Explanation64 = explanation::Explanation<f64>;
pub type Explanation32 = explanation::Explanation<f32>;
