use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("value out of range at {location}: {value}")]
    OutOfRange { location: String, value: f64 },

    #[error("non-finite value encountered in {location}")]
    NonFinite { location: String },

    #[error("non-finite explainer output at sample {sample_index}")]
    NonFiniteSample { sample_index: u64 },

    #[error("incompatible kernel/combination-rule pair: {kernel} with {rule}")]
    IncompatibleRule { kernel: String, rule: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss non-finite)")]
    Diverged { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
