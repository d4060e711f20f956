use thiserror::Error;
use ulab_core::CoreError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("input length {len} exceeds maximum sequence length {max}")]
    Length { len: usize, max: usize },

    #[error("training failed at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("freeze contract violated: {0}")]
    ContractViolation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
