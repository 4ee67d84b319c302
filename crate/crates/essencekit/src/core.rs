//! Domain types, shape contracts, and the cosine geometry every other
//! module builds on.
//!
//! All values are immutable after construction and safe to share across
//! threads; the operations here are pure.

use serde::{Deserialize, Serialize};

use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

/// A point in a generator's extended latent space, shaped `(layers, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T: Scalar> {
    data: Vec<T>,
    layers: usize,
    dim: usize,
    space_id: String,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(data: Vec<T>, layers: usize, dim: usize, space_id: impl Into<String>) -> Result<Self> {
        if layers == 0 || dim == 0 || data.len() != layers * dim {
            return Err(EssenceError::ShapeMismatch {
                context: "LatentCode::new".into(),
                expected: vec![layers, dim],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EssenceError::NonFinite("LatentCode::new".into()));
        }
        Ok(Self {
            data,
            layers,
            dim,
            space_id: space_id.into(),
        })
    }

    pub fn zeros(layers: usize, dim: usize, space_id: impl Into<String>) -> Self {
        Self {
            data: vec![T::zero(); layers * dim],
            layers,
            dim,
            space_id: space_id.into(),
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    /// Elementwise shift by an essence vector. Shape closure: the result is
    /// a valid latent of the same space.
    pub fn shifted(&self, b: &EssenceVector<T>) -> Result<LatentCode<T>> {
        if b.space_id() != self.space_id {
            return Err(EssenceError::SpaceMismatch {
                expected: self.space_id.clone(),
                got: b.space_id().to_string(),
            });
        }
        if b.shape() != self.shape() {
            return Err(EssenceError::ShapeMismatch {
                context: "LatentCode::shifted".into(),
                expected: vec![self.layers, self.dim],
                got: vec![b.shape().0, b.shape().1],
            });
        }
        let data = self
            .data
            .iter()
            .zip(b.data())
            .map(|(&z, &d)| z + d)
            .collect();
        LatentCode::new(data, self.layers, self.dim, self.space_id.clone())
    }
}

/// Where an essence vector came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: ProvenanceMethod,
    pub target_digest: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceMethod {
    Optimizer,
    Encoder,
}

/// The learned additive shift `b`, same shape as a latent of its space.
#[derive(Debug, Clone, PartialEq)]
pub struct EssenceVector<T: Scalar> {
    data: Vec<T>,
    layers: usize,
    dim: usize,
    space_id: String,
    provenance: Provenance,
}

impl<T: Scalar> EssenceVector<T> {
    pub fn new(
        data: Vec<T>,
        layers: usize,
        dim: usize,
        space_id: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if layers == 0 || dim == 0 || data.len() != layers * dim {
            return Err(EssenceError::ShapeMismatch {
                context: "EssenceVector::new".into(),
                expected: vec![layers, dim],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EssenceError::NonFinite("EssenceVector::new".into()));
        }
        if provenance.target_digest.is_empty() || provenance.config_digest.is_empty() {
            return Err(EssenceError::InvalidConfig(
                "essence provenance digests must be non-empty".into(),
            ));
        }
        Ok(Self {
            data,
            layers,
            dim,
            space_id: space_id.into(),
            provenance,
        })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Euclidean norm of the flattened vector.
    pub fn l2_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn negated(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| -v).collect(),
            layers: self.layers,
            dim: self.dim,
            space_id: self.space_id.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Embedding in the semantic encoder's space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding<T: Scalar> {
    data: Vec<T>,
    encoder_id: String,
}

impl<T: Scalar> SemanticEmbedding<T> {
    pub fn new(data: Vec<T>, encoder_id: impl Into<String>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EssenceError::NonFinite("SemanticEmbedding::new".into()));
        }
        Ok(Self {
            data,
            encoder_id: encoder_id.into(),
        })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    /// Raw elementwise difference `self - other`, the per-source semantic
    /// delta.
    pub fn delta_from(&self, other: &SemanticEmbedding<T>) -> Result<SemanticDelta<T>> {
        if self.encoder_id != other.encoder_id {
            return Err(EssenceError::EncoderMismatch {
                expected: self.encoder_id.clone(),
                got: other.encoder_id.clone(),
            });
        }
        if self.dim() != other.dim() {
            return Err(EssenceError::dim_mismatch(
                "SemanticEmbedding::delta_from",
                self.dim(),
                other.dim(),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(SemanticDelta {
            data,
            encoder_id: self.encoder_id.clone(),
        })
    }
}

/// Difference of two semantic embeddings (manipulated minus source).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDelta<T: Scalar> {
    data: Vec<T>,
    encoder_id: String,
}

impl<T: Scalar> SemanticDelta<T> {
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }
}

/// Declared pixel value interval for an image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { min: 0.0, max: 1.0 };
    pub const SYMMETRIC: ValueRange = ValueRange {
        min: -1.0,
        max: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorOrder {
    Grayscale,
    Rgb,
}

/// An `(H, W, C)` float image with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T: Scalar> {
    data: Vec<T>,
    height: usize,
    width: usize,
    channels: usize,
    value_range: ValueRange,
    color_order: ColorOrder,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(
        data: Vec<T>,
        height: usize,
        width: usize,
        channels: usize,
        value_range: ValueRange,
        color_order: ColorOrder,
    ) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(EssenceError::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(EssenceError::ShapeMismatch {
                context: "ImageTensor::new".into(),
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        let lo = T::from_f64_lossy(value_range.min);
        let hi = T::from_f64_lossy(value_range.max);
        for &v in &data {
            if !v.is_finite() || v < lo || v > hi {
                return Err(EssenceError::InvalidImage(format!(
                    "pixel value {v} outside declared range [{}, {}]",
                    value_range.min, value_range.max
                )));
            }
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
            value_range,
            color_order,
        })
    }

    /// Constructor for backend outputs whose values are unconstrained
    /// (toy linear decoders produce unbounded reals); records an unbounded
    /// range marker instead of validating bounds. Still rejects non-finite
    /// values.
    pub fn from_raw(data: Vec<T>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(EssenceError::ShapeMismatch {
                context: "ImageTensor::from_raw".into(),
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EssenceError::NonFinite("ImageTensor::from_raw".into()));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
            value_range: ValueRange {
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            },
            color_order: if channels == 1 {
                ColorOrder::Grayscale
            } else {
                ColorOrder::Rgb
            },
        })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn value_range(&self) -> ValueRange {
        self.value_range
    }

    pub fn color_order(&self) -> ColorOrder {
        self.color_order
    }
}

/// An ordered batch of source latents sharing one latent space.
#[derive(Debug, Clone)]
pub struct SourceBatch<T: Scalar> {
    latents: Vec<LatentCode<T>>,
    batch_id: String,
}

impl<T: Scalar> SourceBatch<T> {
    pub fn new(latents: Vec<LatentCode<T>>, batch_id: impl Into<String>) -> Result<Self> {
        if latents.is_empty() {
            return Err(EssenceError::EmptyBatch("SourceBatch::new".into()));
        }
        let space = latents[0].space_id().to_string();
        let shape = latents[0].shape();
        for z in &latents[1..] {
            if z.space_id() != space {
                return Err(EssenceError::SpaceMismatch {
                    expected: space,
                    got: z.space_id().to_string(),
                });
            }
            if z.shape() != shape {
                return Err(EssenceError::ShapeMismatch {
                    context: "SourceBatch::new".into(),
                    expected: vec![shape.0, shape.1],
                    got: vec![z.shape().0, z.shape().1],
                });
            }
        }
        Ok(Self {
            latents,
            batch_id: batch_id.into(),
        })
    }

    pub fn latents(&self) -> &[LatentCode<T>] {
        &self.latents
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn batch_id(&self) -> &str {
        &self.batch_id
    }

    pub fn space_id(&self) -> &str {
        self.latents[0].space_id()
    }
}

/// Cosine similarity `a.b / (|a||b|)` with a hard zero-norm guard.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(EssenceError::dim_mismatch(
            "cosine_similarity",
            a.len(),
            b.len(),
        ));
    }
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let na = na.sqrt();
    let nb = nb.sqrt();
    let eps = T::norm_epsilon();
    if na <= eps {
        return Err(EssenceError::zero_vector(
            "cosine_similarity (lhs)",
            na.to_f64_lossy(),
        ));
    }
    if nb <= eps {
        return Err(EssenceError::zero_vector(
            "cosine_similarity (rhs)",
            nb.to_f64_lossy(),
        ));
    }
    let cos = dot / (na * nb);
    // Rounding can push |cos| infinitesimally past 1.
    Ok(cos.min(T::one()).max(-T::one()))
}

/// Cosine distance `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    Ok(T::one() - cosine_similarity(a, b)?)
}
