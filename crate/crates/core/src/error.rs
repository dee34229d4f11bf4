use thiserror::Error;

/// Errors raised by the solver, kernels and simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {what} = {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },

    #[error("stage optimizer failed at state {state}: {reason}")]
    StageOptimizer { state: i64, reason: String },

    #[error("value iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("state {state} lies outside window [{lo}, {hi}]")]
    OutsideWindow { state: i64, lo: i64, hi: i64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
