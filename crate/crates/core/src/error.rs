use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ill-conditioned linear system (condition estimate {condition:.3e} > {limit:.1e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
