use thiserror::Error;

/// Errors raised by the algebraic kernels and verifiers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("series live in different spaces ({0})")]
    SpaceMismatch(String),
    #[error("substitution for variable {0} has a nonzero constant term")]
    NonzeroConstant(usize),
    #[error("singular {0}")]
    Singular(String),
    #[error("degenerate {0}")]
    Degenerate(String),
    #[error("ad-exponential did not terminate within {0} steps")]
    NonTerminating(usize),
    #[error("action undefined at step {step}: {reason}")]
    Undefined { step: usize, reason: String },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("not a unit: {0}")]
    NotUnit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
