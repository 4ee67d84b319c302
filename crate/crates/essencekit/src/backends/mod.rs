//! Capability interfaces for the external models the method consumes, plus
//! deterministic toy implementations for desk-scale verification.
//!
//! The pretrained stack (StyleGAN2, CLIP, e4e, ArcFace, an Inception-style
//! extractor) is consumed through these traits by adapter crates; nothing in
//! the library depends on a particular checkpoint. The toy backend realizes
//! every interface with seeded linear maps so the additivity properties of
//! the method hold exactly and every loss is analytically checkable.

pub mod registry;
pub mod toy;

use crate::core::{ImageTensor, LatentCode, SemanticEmbedding};
use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

/// A deterministic, latent-differentiable image generator.
///
/// Generators with stochastic noise inputs must freeze the noise at
/// construction; `decode` is a pure function of the latent.
pub trait Generator<T: Scalar>: Send + Sync {
    fn space_id(&self) -> &str;
    /// `(L, D)` latent shape.
    fn latent_shape(&self) -> (usize, usize);
    /// `(H, W, C)` output shape.
    fn image_shape(&self) -> (usize, usize, usize);
    fn decode(&self, z: &LatentCode<T>) -> Result<ImageTensor<T>>;
    /// Pulls a cotangent on the flattened image back to the flattened
    /// latent (vector-Jacobian product of `decode` at `z`).
    fn decode_vjp(&self, z: &LatentCode<T>, image_cotangent: &[T]) -> Result<Vec<T>>;

    fn check_latent(&self, z: &LatentCode<T>) -> Result<()> {
        if z.space_id() != self.space_id() {
            return Err(EssenceError::SpaceMismatch {
                expected: self.space_id().to_string(),
                got: z.space_id().to_string(),
            });
        }
        let (l, d) = self.latent_shape();
        if z.shape() != (l, d) {
            return Err(EssenceError::ShapeMismatch {
                context: "Generator::check_latent".into(),
                expected: vec![l, d],
                got: vec![z.shape().0, z.shape().1],
            });
        }
        Ok(())
    }
}

/// Image-understanding encoder whose embedding cosine reflects semantic
/// similarity. Differentiable w.r.t. the input image.
pub trait SemanticEncoder<T: Scalar>: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn embed_dim(&self) -> usize;
    /// Embeds an image. Rejects (near-)zero outputs with `ZeroEmbedding`.
    fn embed(&self, img: &ImageTensor<T>) -> Result<SemanticEmbedding<T>>;
    /// Cotangent on the embedding pulled back to the flattened image.
    fn embed_vjp(&self, img: &ImageTensor<T>, cotangent: &[T]) -> Result<Vec<T>>;
}

/// GAN inversion: image to latent code of the paired generator.
pub trait Inverter<T: Scalar>: Send + Sync {
    fn space_id(&self) -> &str;
    fn latent_shape(&self) -> (usize, usize);
    fn invert(&self, img: &ImageTensor<T>) -> Result<LatentCode<T>>;
}

/// An inverter with gradient access to its parameters, the substrate for
/// essence-encoder fine-tuning.
pub trait TrainableInverter<T: Scalar>: Inverter<T> {
    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];
    /// Gradient of the parameters given a cotangent on the output latent
    /// for this input image.
    fn invert_vjp(&self, img: &ImageTensor<T>, latent_cotangent: &[T]) -> Result<Vec<T>>;
}

/// Face identity representation (ArcFace role); used only by evaluation.
pub trait FaceEmbedder<T: Scalar>: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed(&self, img: &ImageTensor<T>) -> Result<Vec<T>>;
}

/// Deep feature extractor for FID statistics (Inception role).
pub trait FeatureExtractor<T: Scalar>: Send + Sync {
    fn feature_dim(&self) -> usize;
    fn features(&self, img: &ImageTensor<T>) -> Result<Vec<T>>;
}

/// Interface conformance suite: shape contracts and determinism at fixed
/// inputs. Adapters must pass this before use; the toy backend passes it by
/// construction.
pub fn check_conformance<T: Scalar>(
    g: &dyn Generator<T>,
    c: &dyn SemanticEncoder<T>,
    inv: Option<&dyn Inverter<T>>,
) -> Result<()> {
    let (l, d) = g.latent_shape();
    let (h, w, ch) = g.image_shape();
    let z = LatentCode::new(
        (0..l * d)
            .map(|i| T::from_f64_lossy(0.1) * T::from_usize(i % 7 + 1).unwrap())
            .collect(),
        l,
        d,
        g.space_id(),
    )?;
    let img_a = g.decode(&z)?;
    let img_b = g.decode(&z)?;
    if img_a.shape() != (h, w, ch) {
        return Err(EssenceError::ShapeMismatch {
            context: "conformance: decode output".into(),
            expected: vec![h, w, ch],
            got: vec![img_a.shape().0, img_a.shape().1, img_a.shape().2],
        });
    }
    if img_a.data() != img_b.data() {
        return Err(EssenceError::InvalidConfig(
            "conformance: generator is not deterministic".into(),
        ));
    }
    let e_a = c.embed(&img_a)?;
    let e_b = c.embed(&img_b)?;
    if e_a.dim() != c.embed_dim() {
        return Err(EssenceError::dim_mismatch(
            "conformance: embed output",
            c.embed_dim(),
            e_a.dim(),
        ));
    }
    if e_a.data() != e_b.data() {
        return Err(EssenceError::InvalidConfig(
            "conformance: semantic encoder is not deterministic".into(),
        ));
    }
    if let Some(inv) = inv {
        let z_hat = inv.invert(&img_a)?;
        if z_hat.shape() != (l, d) {
            return Err(EssenceError::ShapeMismatch {
                context: "conformance: invert output".into(),
                expected: vec![l, d],
                got: vec![z_hat.shape().0, z_hat.shape().1],
            });
        }
        if z_hat.space_id() != g.space_id() {
            return Err(EssenceError::SpaceMismatch {
                expected: g.space_id().to_string(),
                got: z_hat.space_id().to_string(),
            });
        }
    }
    Ok(())
}
