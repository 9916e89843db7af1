//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("negative pool exhausted: requested {requested}, only {available} eligible")]
    PoolExhausted { requested: usize, available: usize },

    #[error("dense solve hit a singular system (pivot {pivot:.3e})")]
    SingularSystem { pivot: f64 },

    #[error("operator is not a contraction (kappa = {kappa:.6})")]
    NonContractive { kappa: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("non-finite value produced by module `{module}`")]
    NonFinite { module: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Exit code the CLI maps this error to: 2 for contract violations
    /// (non-finite losses, broken contraction guarantees), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ContractViolation(_) | Error::NonFinite { .. } | Error::NonContractive { .. } => 2,
            _ => 1,
        }
    }
}
