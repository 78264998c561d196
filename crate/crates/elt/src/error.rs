use thiserror::Error;

/// Crate-wide error type. CLI exit codes map onto the variants:
/// config errors exit 2, numerical failures exit 3, i/o errors exit 4.
#[derive(Debug, Error)]
pub enum EltError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl EltError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        EltError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EltError>;
