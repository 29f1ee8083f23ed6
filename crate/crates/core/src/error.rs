use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample index {index} out of range for {n} samples")]
    SampleOutOfRange { index: usize, n: usize },

    #[error("invalid sparse vector: {0}")]
    InvalidSparse(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("objective is not strongly convex (mu = 0): {0}")]
    NotStronglyConvex(String),

    #[error("reference solver did not reach tolerance {tol:e} within {iterations} iterations (grad norm {grad_norm:e})")]
    SolverDidNotConverge { tol: f64, iterations: usize, grad_norm: f64 },

    #[error("sample {0} has an empty gradient support")]
    EmptySupport(usize),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("bound undefined: {0}")]
    BoundUndefined(String),

    #[error("delay history underflow at iteration {t}: need record {needed}, oldest is {oldest}")]
    HistoryUnderflow { t: u64, needed: u64, oldest: u64 },

    #[error("non-finite update at iteration {t}")]
    NonFinite { t: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("verification input rejected: {0}")]
    Verification(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("worker thread failed: {0}")]
    Thread(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
