use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("id {id} out of range for vocabulary of size {size}")]
    Range { id: usize, size: usize },

    #[error("sequence of length {len} exceeds maximum length {max}")]
    Length { len: usize, max: usize },

    #[error("tokenizer mismatch: checkpoint is bound to {expected}, got {found}")]
    TokenizerMismatch { expected: String, found: String },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("non-finite loss at iteration {iteration} (batch {batch_hash})")]
    NonFiniteLoss { iteration: usize, batch_hash: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Regex(#[from] regex::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user-supplied configuration rather than
    /// a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Shape { .. } | Error::TokenizerMismatch { .. }
        )
    }
}
