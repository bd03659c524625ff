use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud: {0}")]
    EmptyCloud(&'static str),

    #[error("projection needs z > 0, got z = {z}")]
    BadProjection { z: f64 },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("fusion skipped: {0}")]
    FusionSkipped(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("asset io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed topology asset: {0}")]
    Asset(String),

    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
