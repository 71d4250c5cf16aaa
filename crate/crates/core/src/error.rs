use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{}:{line}: {message}", path.display())]
    Data {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unbalanced panel: {0}")]
    Unbalanced(String),

    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("design matrix is rank deficient; columns involved: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("model has {n} rows but {k} columns")]
    TooFewRows { n: usize, k: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("residual sum of squares is zero; log-likelihood is unbounded")]
    DegenerateFit,

    #[error("clustered covariance needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the inputs a user supplied (files, flags,
    /// configs), as opposed to numerical or model failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::Data { .. }
            | Error::Unbalanced(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Contract(_) => true,
            Error::Replicate { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
