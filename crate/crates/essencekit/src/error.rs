//! Error types shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EssenceError>;

#[derive(Debug, Error)]
pub enum EssenceError {
    #[error("zero vector: norm {norm} below guard epsilon in {context}")]
    ZeroVector { context: String, norm: f64 },

    #[error("dimension mismatch: {left} vs {right} in {context}")]
    DimMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("latent space mismatch: expected '{expected}', got '{got}'")]
    SpaceMismatch { expected: String, got: String },

    #[error("encoder mismatch: expected '{expected}', got '{got}'")]
    EncoderMismatch { expected: String, got: String },

    #[error("empty batch in {0}")]
    EmptyBatch(String),

    #[error("batch too small: {context} requires N >= {required}, got {got}")]
    BatchTooSmall {
        context: String,
        required: usize,
        got: usize,
    },

    #[error("encoder produced a (near-)zero embedding")]
    ZeroEmbedding,

    #[error("init mode 'target_inversion' requested but no inverter provided")]
    MissingInverter,

    #[error("inverter exposes no trainable parameters")]
    NonTrainableInverter,

    #[error("covariance matrix square root failed after regularization")]
    SingularCovariance,

    #[error("missing (target, source) pair: ({target_id}, {source_id})")]
    MissingPair { target_id: String, source_id: String },

    #[error("duplicate (target, source) pair: ({target_id}, {source_id})")]
    DuplicatePair { target_id: String, source_id: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("essence file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EssenceError {
    pub fn zero_vector(context: impl Into<String>, norm: f64) -> Self {
        EssenceError::ZeroVector {
            context: context.into(),
            norm,
        }
    }

    pub fn dim_mismatch(context: impl Into<String>, left: usize, right: usize) -> Self {
        EssenceError::DimMismatch {
            context: context.into(),
            left,
            right,
        }
    }
}
