use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// A non-negative weight kept in log space, with exact zero represented
/// explicitly instead of as `-inf`.
#[derive(Clone, Copy, Debug)]
pub enum LogWeight<S> {
    Zero,
    Log(S),
}

impl<S: Scalar> LogWeight<S> {
    pub fn one() -> Self {
        LogWeight::Log(S::zero())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, LogWeight::Zero)
    }

    pub fn mul(self, other: LogWeight<S>) -> LogWeight<S> {
        match (self, other) {
            (LogWeight::Log(a), LogWeight::Log(b)) => LogWeight::Log(a + b),
            _ => LogWeight::Zero,
        }
    }

    /// `self / other`; dividing by zero is a domain error.
    pub fn div(self, other: LogWeight<S>) -> Result<LogWeight<S>> {
        match (self, other) {
            (_, LogWeight::Zero) => Err(Error::domain("division by a zero weight")),
            (LogWeight::Zero, _) => Ok(LogWeight::Zero),
            (LogWeight::Log(a), LogWeight::Log(b)) => Ok(LogWeight::Log(a - b)),
        }
    }

    /// The log weight; zero weights are a domain error.
    pub fn log(self) -> Result<S> {
        match self {
            LogWeight::Log(a) => Ok(a),
            LogWeight::Zero => Err(Error::domain("log of a zero weight")),
        }
    }

    pub fn log_value(&self) -> f64 {
        match self {
            LogWeight::Log(a) => a.value(),
            LogWeight::Zero => f64::NEG_INFINITY,
        }
    }

    /// The weight on the linear scale.
    pub fn density(self) -> S {
        match self {
            LogWeight::Log(a) => a.exp(),
            LogWeight::Zero => S::zero(),
        }
    }

    pub fn detach(self) -> LogWeight<S> {
        match self {
            LogWeight::Log(a) => LogWeight::Log(a.detach()),
            LogWeight::Zero => LogWeight::Zero,
        }
    }

    /// Log of the arithmetic mean of the weights.
    pub fn mean(ws: &[LogWeight<S>]) -> LogWeight<S> {
        let logs: Vec<S> = ws.iter().filter_map(|w| w.log().ok()).collect();
        match log_sum_exp(&logs) {
            None => LogWeight::Zero,
            Some(l) if ws.len() == 1 => LogWeight::Log(l),
            Some(l) => LogWeight::Log(l - (ws.len() as f64).ln()),
        }
    }
}
