use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid kinematics: {0}")]
    InvalidKinematics(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("sector extends beyond image bounds: {0}")]
    OutOfBounds(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver did not reach tolerance after {iterations} iterations (relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("map/frame alignment: {0}")]
    Alignment(String),

    #[error("train/test split: {0}")]
    Split(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
