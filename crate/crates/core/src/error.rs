use std::path::PathBuf;

/// Errors raised by the reconstruction toolkit.
///
/// Variants are grouped so that front ends can map them to stable exit
/// codes: [`Error::is_validation`], [`Error::is_numerical`], everything else
/// is a data/IO error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sidecar not found: {0}")]
    SidecarNotFound(PathBuf),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("malformed {file}: {reason}")]
    Format { file: String, reason: String },

    #[error("non-finite value in {file} at row {row}, column {column}")]
    NonFinite {
        file: String,
        row: usize,
        column: usize,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient beats: {0} beats, need at least 3")]
    InsufficientBeats(usize),

    #[error("no cardiac rhythm (autocorrelation peak {0:.3})")]
    NoCardiacRhythm(f64),

    #[error("numerical divergence: {0}")]
    Divergence(String),

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

    pub(crate) fn format(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            reason: reason.into(),
        }
    }

    /// Precondition or configuration errors.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Shape(_))
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
