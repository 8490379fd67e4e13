//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The thinning step found an intensity value above the declared bound,
    /// meaning the supplied `lambda_max` is not actually an upper bound.
    #[error("intensity bound violated at {point:?}: value {value} > lambda_max {bound}")]
    BoundViolation {
        point: Vec<f64>,
        value: f64,
        bound: f64,
    },

    #[error("map output has length {got}, declared output dimension is {want}")]
    ContractViolation { want: usize, got: usize },

    #[error("forward model failed: {0}")]
    Forward(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    SpdViolation(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate responsibilities for sample {sample}: no component has positive density")]
    DegenerateResponsibility { sample: usize },

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("empty pattern: {0}")]
    EmptyPattern(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver input invalid: {0}")]
    SolverInput(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
