use thiserror::Error;

/// Errors raised by the simulation, spectral and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("circulant embedding too indefinite: clipped fraction {clipped_fraction:.3e} exceeds {threshold:.3e}")]
    IndefiniteEmbedding { clipped_fraction: f64, threshold: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
