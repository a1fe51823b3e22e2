use thiserror::Error;

use crate::engine::RunRecord;
use crate::linalg::Mat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {message} (residual {residual:.3e})")]
    Numerical { message: String, residual: f64 },

    #[error("quadrature budget exhausted after {evaluations} evaluations (error bound {bound:.3e})")]
    Quadrature {
        estimate: Box<Mat>,
        bound: f64,
        evaluations: usize,
    },

    /// `-B` is not Hurwitz, so the limiting process has no stationary law.
    #[error("no stationary covariance: {0}")]
    NotHurwitz(String),

    /// The drift has a non-positive eigenvalue real part, so some direction never mixes.
    #[error("transient direction: minimum eigenvalue real part of the drift is {0:.3e}")]
    TransientDirection(f64),

    #[error("invalid scaling regime: {0}")]
    Regime(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: row {row}, column {col}: {message}")]
    Ingest {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(
        "M-estimation did not converge after {iterations} iterations (gradient norm {grad_norm:.3e}): {reason}"
    )]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
        reason: String,
    },

    /// The chain left every bounded region; the partial record is kept for inspection.
    #[error("iterates diverged at step {step}")]
    Diverged { step: u64, partial: Box<RunRecord> },

    #[error("target unreachable: {0}")]
    Unreachable(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
