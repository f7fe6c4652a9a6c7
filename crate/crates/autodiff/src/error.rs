use thiserror::Error;

/// Errors raised by tape operations and the gradient checker.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by backward")]
    TapeConsumed,

    #[error("gradient check: function produced different values on identical inputs")]
    NonDeterministic,
}

pub type Result<T> = std::result::Result<T, Error>;
