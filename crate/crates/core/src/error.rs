use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Invalid(msg.into()))
}
