use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants carry the tree path where it makes sense,
/// so that failures deep inside a sample or schema can be located.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("schema conflict at {path}: {reason}")]
    SchemaConflict { path: String, reason: String },

    #[error("structure error at {path}: {reason}")]
    Structure { path: String, reason: String },

    #[error("extraction failed at {path}: {reason}")]
    Extract { path: String, reason: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training aborted: non-finite loss in minibatch {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("unknown label {0:?} not present in the training vocabulary")]
    UnknownLabel(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input rather than
    /// by the environment; the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
