use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("invalid treatment label {label:?} on line {line}")]
    InvalidTreatmentLabel { label: String, line: usize },

    #[error("non-finite value in column {column:?} on line {line}")]
    NonFinite { column: String, line: usize },

    #[error("no usable rows after dropping incomplete records")]
    NoUsableRows,

    #[error("degenerate treatment assignment: group t={0} is empty")]
    DegenerateTreatment(u8),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("column {0} is tagged collider and cannot be transported (use force to override)")]
    ColliderTransport(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix has a negative eigenvalue {0:e}")]
    NotPositiveSemidefinite(f64),

    #[error("covariance is singular beyond the ridge budget (condition number {0:e})")]
    Singular(f64),

    #[error("marginals are unbalanced: sums {0} and {1}")]
    UnbalancedMarginals(f64, f64),

    #[error(
        "instance too large: {cells} cost cells exceeds the guard of {limit}; subsample or force"
    )]
    TooLarge { cells: usize, limit: usize },

    #[error("complete separation suspected (|beta| = {0:e}); enable the ridge penalty")]
    Separation(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{failed} of {total} resampling replicates failed; last error: {last}")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        last: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
