//! Error types shared across the toolkit.

use thiserror::Error;

/// A point at which an arithmetic operation left its domain (or overflowed).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain fault in `{op}` at operand {operand}")]
pub struct DomainFault {
    /// The operation that faulted (`ln`, `div`, `pow`, ...).
    pub op: &'static str,
    /// The offending operand value.
    pub operand: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {position}: expected {expected}, found `{found}`")]
    Parse {
        position: usize,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Domain(#[from] DomainFault),

    #[error("evaluation error at {location}: {fault}")]
    Evaluation { location: f64, fault: DomainFault },

    #[error(
        "gain `{gain}` saturates: target {target} exceeds value {reachable} at the domain cap"
    )]
    Saturation {
        gain: String,
        target: f64,
        reachable: f64,
    },

    #[error("kind check failed for `{gain}`: {detail}")]
    Kind { gain: String, detail: String },

    #[error("horizon exhausted for `{what}`: {detail}")]
    Horizon { what: String, detail: String },

    #[error("integration fault at t={time}: {fault}")]
    Integration { time: f64, fault: DomainFault },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
