use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sensitive column {column} is not binary (row {row} has value {value})")]
    NonBinarySensitive { column: usize, row: usize, value: f64 },
    #[error("edge ({src}, {dst}) references a node outside 0..{node_count}")]
    DanglingEdge { src: usize, dst: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no sensitive feature configured")]
    SensitiveUnset,
    #[error("node {0} has no incident edges")]
    IsolatedNode(usize),
    #[error("too few samples for the kernel surrogate: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("no perturbation kept the original prediction after {0} attempts")]
    ResampleExhausted(usize),
    #[error("mask length mismatch: expected {expected}, found {found}")]
    MaskLength { expected: usize, found: usize },
    #[error("explanation of kind {0} is missing its mask")]
    MissingMask(&'static str),
    #[error("explanations are of different kinds")]
    KindMismatch,
    #[error("empty sensitive group {0}")]
    EmptyGroup(u8),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("singular matrix")]
    Singular,
    #[error("ill-conditioned inversion: residual {0:e}")]
    IllConditioned(f64),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("node {0} is not a neighbor of the target")]
    NotNeighbor(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ProbeError>;
