//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid {what}: {message}")]
    InvalidParameter { what: &'static str, message: String },

    /// A document (spec, config, dataset) failed schema or invariant validation.
    #[error("invalid {kind}: {message}")]
    InvalidDocument { kind: &'static str, message: String },

    #[error(
        "{player} policy entry {index} is zero; log-ratios are undefined: \
         apply a probability floor (see empirical_policies) before building the system"
    )]
    ZeroProbability { player: &'static str, index: usize },

    /// The least-squares solution is numerically zero, i.e. the observed play is
    /// uniform and carries no payoff information.
    #[error("non-uniformity condition violated: least-squares solution is numerically zero")]
    NonUniformity,

    #[error(
        "QRE solve failed at state {state}: residual {residual:.3e} after {iterations} iterations"
    )]
    StateSolveFailed {
        state: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("state-action pair (s={state}, a={a}, b={b}) has no observations; transition MLE is undefined with alpha = 0")]
    UnvisitedStateAction { state: usize, a: usize, b: usize },

    #[error("self-test failed: {failed} of {total} checks did not pass")]
    SelfTestFailed { failed: usize, total: usize },

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(String),

    #[error("CSV: {0}")]
    Csv(String),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config errors, 3 for numerical
    /// failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidParameter { .. }
            | Error::InvalidDocument { .. }
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::ZeroProbability { .. }
            | Error::NonUniformity
            | Error::StateSolveFailed { .. }
            | Error::NotConverged { .. }
            | Error::UnvisitedStateAction { .. }
            | Error::SelfTestFailed { .. } => 3,
            Error::Io(_) => 4,
        }
    }

    pub(crate) fn invalid_document(kind: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidDocument {
            kind,
            message: message.into(),
        }
    }

    pub(crate) fn invalid_parameter(what: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Json(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Csv(err.to_string())
    }
}
