use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration invariant is violated.
    #[error("invalid config: {0}")]
    Config(String),

    /// An operation that needs at least one sample got none.
    #[error("empty batch")]
    EmptyBatch,

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    /// Malformed or truncated binary container.
    #[error("bad file format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A numeric precondition failed (zero-norm column, zero reference, ...).
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
