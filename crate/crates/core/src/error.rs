use thiserror::Error;

/// Errors produced by the tensor engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("{op}: degenerate input ({detail})")]
    DegenerateInput { op: &'static str, detail: String },

    #[error("backward already consumed this tape")]
    TapeConsumed,

    #[error("operands belong to different tapes")]
    TapeMismatch,

    #[error("parameter `{name}` has no gradient; run backward first")]
    MissingGradient { name: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
