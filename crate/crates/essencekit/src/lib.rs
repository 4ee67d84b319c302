//! Essence transfer toolkit.
//!
//! Learns a single additive shift `b` in a generator's latent space whose
//! induced change in a semantic encoder's embedding space is constant across
//! source images and matches a target image. Ships the per-target optimizer,
//! an encoder fine-tuning path that amortizes the optimization, and the full
//! evaluation suite (identity scores, semantic scores, FID, ablation and
//! batch-size sensitivity harnesses).
//!
//! Core math is generic over the scalar type (`f32` or `f64`) via
//! [`Scalar`]; concrete aliases for the common instantiations live at the
//! crate root.

pub mod backends;
pub mod core;
pub mod encoder_trainer;
pub mod error;
pub mod essv;
pub mod evaluation;
pub mod losses;
pub mod optimizer;
pub mod scalar;

pub use error::{EssenceError, Result};
pub use scalar::Scalar;

pub use crate::core::{
    cosine_distance, cosine_similarity, EssenceVector, ImageTensor, LatentCode, Provenance,
    SemanticDelta, SemanticEmbedding, SourceBatch,
};

/// `f64` instantiations — the test/oracle precision.
pub type LatentCode64 = core::LatentCode<f64>;
pub type EssenceVector64 = core::EssenceVector<f64>;
pub type SemanticEmbedding64 = core::SemanticEmbedding<f64>;
pub type SemanticDelta64 = core::SemanticDelta<f64>;
pub type ImageTensor64 = core::ImageTensor<f64>;
pub type SourceBatch64 = core::SourceBatch<f64>;

/// `f32` instantiations for training paths that opt into single precision.
pub type LatentCode32 = core::LatentCode<f32>;
pub type EssenceVector32 = core::EssenceVector<f32>;
pub type SemanticEmbedding32 = core::SemanticEmbedding<f32>;
pub type ImageTensor32 = core::ImageTensor<f32>;
pub type SourceBatch32 = core::SourceBatch<f32>;
