use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hrv_bold::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("missing artifacts under {root}: {}", .missing.join(", "))]
    MissingArtifacts { root: PathBuf, missing: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(e) if e.is_numerical() => EXIT_DIVERGENCE,
            CliError::Config(_) => EXIT_VALIDATION,
            _ => EXIT_DATA,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Core(hrv_bold::Error::Invalid("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(hrv_bold::Error::Shape("x".into())).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(hrv_bold::Error::Divergence("x".into())).exit_code(), 4);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        let missing = CliError::MissingArtifacts {
            root: "out".into(),
            missing: vec!["a".into()],
        };
        assert_eq!(missing.exit_code(), 3);
    }
}
