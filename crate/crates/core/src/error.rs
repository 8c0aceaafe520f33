use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("family size {count} exceeds the enumeration cap {cap}")]
    BudgetExceeded { count: String, cap: u64 },

    #[error("instance has {got} features, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("subspace {0} contains no learnable features")]
    NoUsableFeatures(usize),

    #[error("cannot open {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown label column `{0}`")]
    UnknownColumn(String),

    #[error("refusing to certify with a heuristic corruption count at l={l}: greedy search may understate the adversary")]
    UnsoundCertificate { l: usize },

    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
