use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid optical system: {0}")]
    InvalidSystem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lenslet placement infeasible: {0}")]
    PlacementInfeasible(String),

    #[error("source at ({x:.3}, {y:.3}, {z:.3}) um is outside the simulation validity range: {reason}")]
    SourceOutOfRange { x: f64, y: f64, z: f64, reason: String },

    #[error("angular spectrum sampling violated: {0}")]
    Aliasing(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("container error in {field}: {msg}")]
    Container { field: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
