use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("png at {path}: {detail}")]
    Png { path: PathBuf, detail: String },

    #[error("parse error in {path} at {field}: {detail}")]
    Parse {
        path: PathBuf,
        field: String,
        detail: String,
    },

    #[error("generation: {0}")]
    Generation(String),

    #[error(transparent)]
    Core(#[from] handmesh_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, field: &str, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: path.into(),
            field: field.to_string(),
            detail: detail.into(),
        }
    }
}
