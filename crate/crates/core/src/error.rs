use thiserror::Error;

/// Errors produced by the transport, inference and colocalization routines.
#[derive(Debug, Error)]
pub enum RotError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point outside the domain of the {regularizer} regularizer: entry {index} = {value}")]
    Domain {
        regularizer: &'static str,
        index: usize,
        value: f64,
    },

    #[error("no convergence after {iterations} iterations (marginal residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("marginal has zero entries; reduce the support before calling this routine")]
    ReductionRequired,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<RotError>,
    },

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image decoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl RotError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RotError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, RotError>;
