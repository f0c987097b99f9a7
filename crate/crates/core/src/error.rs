use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("node {node} out of range for {nodes} nodes")]
    InvalidNode { node: usize, nodes: usize },

    #[error("example index {index} out of range for {len} examples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("margin cache does not match the supplied vectors")]
    StaleCache,

    #[error("inner solver diverged (iterate norm {norm})")]
    Diverged { norm: f64 },

    #[error("zero gradient passed to the direction safeguard")]
    ZeroGradient,

    #[error("direction is not a descent direction (g.d = {slope})")]
    NotDescent { slope: f64 },

    #[error("line search exhausted {evals} evaluations (best Armijo step: {best:?})")]
    LineSearch { evals: usize, best: Option<f64> },

    #[error("reference solver stopped at gradient norm {grad_norm} above tolerance {tol}")]
    ReferenceNotConverged { grad_norm: f64, tol: f64 },

    #[error("reference objective must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("AUPRC needs at least one positive label")]
    NoPositives,

    #[error("{0}")]
    Format(String),
}
