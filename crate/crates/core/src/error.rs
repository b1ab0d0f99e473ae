use thiserror::Error;

use crate::expr::{EvalError, ParseError};

/// Errors raised by the game model and the algorithms built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("non-finite value from {function} at action {action:?}, bids {bids:?}")]
    NonFinite {
        function: String,
        action: Vec<f64>,
        bids: Vec<f64>,
    },

    #[error("evaluation of {function} failed: {source}")]
    Eval {
        function: String,
        #[source]
        source: EvalError,
    },

    #[error("parse error in {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },

    #[error("principal {principal}: declared {declared} direction contradicted at action {action:?} (u(lo)={at_low}, u(hi)={at_high})")]
    Monotonicity {
        principal: usize,
        declared: &'static str,
        action: Vec<f64>,
        at_low: f64,
        at_high: f64,
    },

    #[error("size guard exceeded: {what} needs {needed} evaluations, limit {limit}")]
    SizeGuard {
        what: String,
        needed: f64,
        limit: f64,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("unknown game `{0}`")]
    UnknownGame(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Structure(format!("json: {e}"))
    }
}
