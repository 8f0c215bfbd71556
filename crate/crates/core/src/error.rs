use thiserror::Error;

use crate::matpower::CaseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("degenerate constraints: {0}")]
    DegenerateConstraints(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid case: {0}")]
    InvalidCase(String),

    /// The exponential line penalty would overflow.
    #[error("penalty saturation on line {line}: alpha * P^2 = {exponent:.3e} exceeds {limit}")]
    Saturation { line: usize, exponent: f64, limit: f64 },

    #[error("round oracle failed to converge after {iterations} iterations (residual {residual:.3e})")]
    OracleFailure { iterations: usize, residual: f64 },

    #[error(transparent)]
    Case(#[from] CaseError),

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::AtRound { .. } => e,
            e => Error::AtRound {
                round,
                source: Box::new(e),
            },
        }
    }

    /// Round index attached to the error, if any.
    pub fn round(&self) -> Option<usize> {
        match self {
            Error::AtRound { round, .. } => Some(*round),
            _ => None,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn ensure_finite_vec(name: &str, v: &nalgebra::DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDomain(format!("{name} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_mat(name: &str, m: &nalgebra::DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDomain(format!("{name} has non-finite entries")))
    }
}
