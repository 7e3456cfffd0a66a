use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model evaluation failed in {what} at {location}")]
    ModelEvaluation { what: &'static str, location: String },

    #[error("trajectory {trajectory} blew up at step {step}: {what} is not finite")]
    BlowUp {
        trajectory: usize,
        step: usize,
        what: &'static str,
    },

    #[error("transport problem with {variables} coupling variables exceeds the cap of {cap}; subsample the measures")]
    Size { variables: usize, cap: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("diffusion matrix is singular at {location}")]
    Ellipticity { location: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
