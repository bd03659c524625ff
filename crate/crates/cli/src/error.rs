use std::path::PathBuf;

use thiserror::Error;

/// Errors are sorted into validation (exit 1), runtime (exit 2) and
/// gradient-check failures (exit 3).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),

    #[error("runtime: {0}")]
    Runtime(String),

    #[error("gradient checks failed: {0}")]
    GradCheck(String),

    #[error("io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 2,
            CliError::GradCheck(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<handmesh_core::Error> for CliError {
    fn from(e: handmesh_core::Error) -> CliError {
        match e {
            handmesh_core::Error::Config(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<handmesh_synth::Error> for CliError {
    fn from(e: handmesh_synth::Error) -> CliError {
        match e {
            handmesh_synth::Error::Parse { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<autodiff::Error> for CliError {
    fn from(e: autodiff::Error) -> CliError {
        CliError::Runtime(e.to_string())
    }
}
