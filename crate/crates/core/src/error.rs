use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image too small: {height}x{width}, need at least {min}x{min}")]
    ImageTooSmall { height: usize, width: usize, min: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("single-channel required: {0}")]
    SingleChannelRequired(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("FRC undefined: {0}")]
    FrcUndefined(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("labels missing for {count} entries (first: {first})")]
    LabelsMissing { count: usize, first: String },

    #[error("architecture fingerprint mismatch: file has {found}, expected {expected}")]
    FingerprintMismatch { found: String, expected: String },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command line front end to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NumericFailure(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Data,
    Numeric,
}
