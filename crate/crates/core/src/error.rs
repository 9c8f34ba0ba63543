use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("smoothness violation: smooth value from `{origin}` consumed by non-smooth {consumer}")]
    Smoothness { origin: String, consumer: String },

    #[error("duplicate choice name `{0}`")]
    DuplicateName(String),

    #[error("traces are not disjoint: `{0}` appears in both")]
    Disjointness(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("strategy `{strategy}` is not valid for {family}")]
    InvalidStrategy { family: String, strategy: String },

    #[error("enumeration needs finite support, but `{0}` has infinite support")]
    InfiniteSupport(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("exact density requested for a program with a stochastic node; use the density estimator")]
    StochasticNode,

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("resampling failed: every particle has zero weight")]
    Resampling,

    #[error("reverse mode: {0}")]
    Tape(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::NumericDomain(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }
}
