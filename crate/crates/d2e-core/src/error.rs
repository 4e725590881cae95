//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum D2eError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An architecture spec does not chain geometrically.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// An argument violates a documented contract (non-distribution rows, bad range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A config key is missing, unknown, or has an unparseable value.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty dataset")]
    EmptyDataset,

    /// A mode is not applicable to the given inputs (e.g. exact TV on off-grid data).
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// Pearson correlation of a zero-variance series.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A dataset file failed validation while being read or written.
    #[error("dataset file: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl D2eError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        D2eError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, D2eError>;
