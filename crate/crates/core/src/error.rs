use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: shape mismatches, out-of-bounds inputs.
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration or parameter values.
    #[error("config error: {0}")]
    Config(String),

    /// A covariance matrix could not be factorized even at the largest jitter.
    #[error("matrix is not positive definite (tried jitter up to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    /// Other numerical failure (singular triangular factor, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Two rows of a query set coincide, so the sample-path gradient is undefined.
    #[error("degenerate query set: rows {0} and {1} coincide")]
    DegenerateQuery(usize, usize),

    /// Every hyperparameter restart failed.
    #[error("hyperparameter fit failed: {0}")]
    Fit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
