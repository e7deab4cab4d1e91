use thiserror::Error;

/// Errors produced by graph construction, rate evaluation, solvers and experiments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("node {node} is {actual}, expected a {expected} node")]
    WrongClass {
        node: usize,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("edge ({from},{to}) is not in the color graph")]
    UnknownEdge { from: usize, to: usize },

    #[error("state space of {states} configurations exceeds the cap of {cap}")]
    Capacity { states: u128, cap: usize },

    #[error("numerical blow-up at t = {time}")]
    NumericalBlowup { time: f64 },

    #[error("no convergence after {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { residuals: Vec<f64> },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors that stem from numerics rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowup { .. }
                | Error::NonConvergence { .. }
                | Error::Numerical(_)
                | Error::AssumptionViolation(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfiguration(msg.into())
}

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
