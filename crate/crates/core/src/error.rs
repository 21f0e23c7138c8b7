use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which side of a speedup comparison failed to reach the loss threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunSide {
    Baseline,
    Candidate,
}

impl std::fmt::Display for RunSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunSide::Baseline => f.write_str("baseline"),
            RunSide::Candidate => f.write_str("candidate"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("edge ({i}, {j}) has non-positive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("graph specification yields no nodes")]
    EmptyGraph,
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("malformed sparse matrix: {0}")]
    MalformedMatrix(String),
    #[error("operation requires a symmetric matrix")]
    AsymmetricInput,
    #[error("node {0} has zero degree")]
    IsolatedNode(usize),
    #[error("matrix has no nonzero entries")]
    ZeroMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("size {n} exceeds the limit of {limit}")]
    SizeLimit { n: usize, limit: usize },
    #[error("operation not supported for {0}")]
    UnsupportedProblem(&'static str),
    #[error("points {0} and {1} coincide")]
    DegenerateCloud(usize, usize),
    #[error("backward pass called without a cached forward pass")]
    NoCachedForward,
    #[error("matrix is not positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("at least one sample is required")]
    InsufficientSamples,
    #[error("optimizer state has not been initialized for this parameter bundle")]
    UninitializedState,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at iteration {iter}")]
    NonFiniteLoss { iter: usize, loss: f64 },
    #[error("{0} run never reached the loss threshold")]
    ThresholdNotReached(RunSide),
    #[error("empty run record")]
    EmptyRecord,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
