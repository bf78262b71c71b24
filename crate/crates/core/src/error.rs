use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (shape, range, emptiness).
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite or underflowing value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    SpectralNotConverged { iterations: usize, estimate: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPointNotConverged { iterations: usize, residual: f64 },

    /// A layer was used without a valid Lipschitz budget.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Failure while generating one of several samples.
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
