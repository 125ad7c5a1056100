use std::io;

use thiserror::Error;

/// Errors raised by the simulation toolkit.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("pdf is not normalized (integral = {integral})")]
    Normalization { integral: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("no photons registered")]
    NoPhotons,

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SimError::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        SimError::Format(msg.into())
    }
}
