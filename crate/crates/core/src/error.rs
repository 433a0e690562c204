use thiserror::Error;

#[derive(Debug, Error)]
pub enum UboError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("kernel matrix singular even with jitter {jitter:e}")]
    Singular { jitter: f64 },
    #[error("matrix is not positive semi-definite")]
    NotPsd,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("objective returned non-finite values twice in a row at evaluation {eval_index}")]
    ObjectiveFailed { eval_index: usize },
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, UboError>;
