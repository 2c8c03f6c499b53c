use thiserror::Error;

use crate::model::Regime;

/// Errors raised by the solvers, value functions, simulators and verifiers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the formula being evaluated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The parameter combination has no closed-form solution in this crate.
    #[error("unsupported regime: {0}")]
    Unsupported(Regime),

    /// The requested computation needs a finite value function.
    #[error("value function is infinite in regime {0}")]
    InfiniteValue(Regime),

    /// Bisection was handed an interval without a sign change.
    #[error("root not bracketed on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
