use std::io;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or extents do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A model, solver or training setting is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called in the wrong state or with the wrong kind of argument.
    #[error("usage error: {0}")]
    Usage(String),

    /// A binary container could not be decoded.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The solver step exceeded the advective stability bound.
    #[error("step-size error: Courant number {courant:.4} exceeds the limit {limit}")]
    StepSize { courant: f64, limit: f64 },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step} (lr = {lr:e}, grad norm = {grad_norm:e})")]
    NonFinite { step: usize, lr: f64, grad_norm: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use dim_err;
pub(crate) use usage_err;
