use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the extraction, regression and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("could not decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("image is {width}x{height}, at least 8x8 is required")]
    Dimension { width: usize, height: usize },

    #[error("non-finite sample in input data")]
    NonFinite,

    #[error("format error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Format { row: Option<usize>, message: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("matrix not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("failed to load {} image(s): {}", .0.len(), .0.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Unloadable(Vec<(PathBuf, String)>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            row,
            message: message.into(),
        }
    }

    /// True for failures of the numerical stages (factorization, correlation).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::UndefinedCorrelation(_) | Error::Fit(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
