use thiserror::Error;

use crate::qp::QpStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// `cos(theta)` of the pendulum came within the singularity guard.
    #[error("pendulum reached gimbal singularity (theta = {theta} rad)")]
    GimbalSingularity { theta: f64 },

    #[error("container shape {0:?} has no natural-frequency formula")]
    UnsupportedShape(crate::slosh::ContainerShape),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("horizon mismatch: model has {model} steps, got {given}")]
    HorizonMismatch { model: usize, given: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cost matrix is not positive semidefinite")]
    NotConvex,

    #[error("QP solver failed with status {0:?}")]
    SolverFailure(QpStatus),

    #[error("robot description: {0}")]
    RobotDescription(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
