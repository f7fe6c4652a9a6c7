use thiserror::Error;

/// Errors across the data, feature, model, and evaluation layers.
#[derive(Debug, Error)]
pub enum MftrajError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error in scene '{scene}': {msg}")]
    Schema { scene: String, msg: String },

    #[error("timing error in scene '{scene}': {msg}")]
    Timing { scene: String, msg: String },

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
}

impl MftrajError {
    /// Process exit code per interface contract: 2 for configuration
    /// problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            MftrajError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, MftrajError>;
