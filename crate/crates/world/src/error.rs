use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("template partitions exhausted: {0}")]
    TemplatesExhausted(String),
}

pub type Result<T> = std::result::Result<T, WorldError>;
