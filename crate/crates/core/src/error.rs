use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid ensemble: {0}")]
    Ensemble(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerically singular system: {0}")]
    Singular(String),

    #[error("step size underflow (h = {h:e}) at t = {t}; problem too stiff for the explicit integrator")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state encountered; last good time t = {last_good}")]
    Divergence { last_good: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
