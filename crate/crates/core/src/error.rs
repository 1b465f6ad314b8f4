use thiserror::Error;

use crate::coeffs::{CoeffError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Parse { context: String, source: ParseError },
    #[error("{what} at {point}: {source}")]
    Coefficient {
        what: &'static str,
        point: f64,
        source: CoeffError,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite {what}; last safe node t = {last_safe}")]
    NonFinite { what: String, last_safe: f64 },
    #[error("grids are not aligned: {0}")]
    Misaligned(String),
    #[error("contradictory regime probes: {0}")]
    Contradiction(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl Error {
    /// Failures caused by the numerics of a valid request, as opposed to a
    /// malformed request.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Coefficient { .. } | Error::NonFinite { .. } | Error::Contradiction(_)
        )
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
