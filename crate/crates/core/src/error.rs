use std::path::PathBuf;

pub type Result<T, E = LmcError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LmcError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
    },

    #[error("{}: parse error at byte offset {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("invalid shift spec: {0}")]
    InvalidShift(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LmcError {
    pub(crate) fn parse(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        LmcError::Parse {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
