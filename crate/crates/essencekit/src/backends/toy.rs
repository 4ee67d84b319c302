//! Seeded linear (and optionally tanh-squashed) toy backends.
//!
//! `decode(z) = A . flatten(z)` and `raw_embed(x) = M . flatten(x)` with A, M
//! drawn once from a seeded standard normal. Exact linearity makes the
//! constant-delta property of the method hold to machine precision, so every
//! loss and gradient has a closed-form oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backends::{
    FaceEmbedder, FeatureExtractor, Generator, Inverter, SemanticEncoder, TrainableInverter,
};
use crate::core::{ImageTensor, LatentCode, SemanticEmbedding};
use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub layers: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        // Large enough for nontrivial gradient checks, small enough for
        // finite differences.
        Self {
            layers: 3,
            dim: 8,
            height: 8,
            width: 8,
            channels: 1,
            embed_dim: 16,
            feature_dim: 8,
            seed: 7,
        }
    }
}

impl ToyConfig {
    pub fn latent_len(&self) -> usize {
        self.layers * self.dim
    }

    pub fn pixel_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn space_id(&self) -> String {
        format!("toy-l{}d{}-s{}", self.layers, self.dim, self.seed)
    }
}

/// Row-major `rows x cols` matrix over the backend scalar.
#[derive(Debug, Clone)]
struct Matrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Scalar> Matrix<T> {
    fn sample(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(v)
            })
            .collect();
        Self { data, rows, cols }
    }

    fn from_f64(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        Self {
            data: data.into_iter().map(T::from_f64_lossy).collect(),
            rows,
            cols,
        }
    }

    fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![T::zero(); self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            out[r] = acc;
        }
        out
    }

    /// `transpose(self) . y`
    fn matvec_t(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let yr = y[r];
            for (o, a) in out.iter_mut().zip(row) {
                *o += *a * yr;
            }
        }
        out
    }
}

pub struct ToyGenerator<T: Scalar> {
    a: Matrix<T>,
    cfg: ToyConfig,
    space_id: String,
}

impl<T: Scalar> Generator<T> for ToyGenerator<T> {
    fn space_id(&self) -> &str {
        &self.space_id
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.cfg.layers, self.cfg.dim)
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        (self.cfg.height, self.cfg.width, self.cfg.channels)
    }

    fn decode(&self, z: &LatentCode<T>) -> Result<ImageTensor<T>> {
        self.check_latent(z)?;
        let pixels = self.a.matvec(z.data());
        ImageTensor::from_raw(pixels, self.cfg.height, self.cfg.width, self.cfg.channels)
    }

    fn decode_vjp(&self, z: &LatentCode<T>, image_cotangent: &[T]) -> Result<Vec<T>> {
        self.check_latent(z)?;
        if image_cotangent.len() != self.cfg.pixel_len() {
            return Err(EssenceError::dim_mismatch(
                "ToyGenerator::decode_vjp",
                self.cfg.pixel_len(),
                image_cotangent.len(),
            ));
        }
        Ok(self.a.matvec_t(image_cotangent))
    }
}

pub struct ToyEncoder<T: Scalar> {
    m: Matrix<T>,
    cfg: ToyConfig,
    encoder_id: String,
}

impl<T: Scalar> ToyEncoder<T> {
    fn check_image(&self, img: &ImageTensor<T>) -> Result<()> {
        let expected = (self.cfg.height, self.cfg.width, self.cfg.channels);
        if img.shape() != expected {
            return Err(EssenceError::ShapeMismatch {
                context: "ToyEncoder::embed".into(),
                expected: vec![expected.0, expected.1, expected.2],
                got: vec![img.shape().0, img.shape().1, img.shape().2],
            });
        }
        Ok(())
    }

    /// The raw linear map, without the zero-output guard. Exposed for the
    /// analytic linearity checks; normalization lives in the cosine ops.
    pub fn raw_embed(&self, img: &ImageTensor<T>) -> Result<Vec<T>> {
        self.check_image(img)?;
        Ok(self.m.matvec(img.data()))
    }
}

impl<T: Scalar> SemanticEncoder<T> for ToyEncoder<T> {
    fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed(&self, img: &ImageTensor<T>) -> Result<SemanticEmbedding<T>> {
        let raw = self.raw_embed(img)?;
        let norm = raw.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if norm <= T::norm_epsilon() {
            return Err(EssenceError::ZeroEmbedding);
        }
        SemanticEmbedding::new(raw, self.encoder_id.clone())
    }

    fn embed_vjp(&self, img: &ImageTensor<T>, cotangent: &[T]) -> Result<Vec<T>> {
        self.check_image(img)?;
        if cotangent.len() != self.cfg.embed_dim {
            return Err(EssenceError::dim_mismatch(
                "ToyEncoder::embed_vjp",
                self.cfg.embed_dim,
                cotangent.len(),
            ));
        }
        Ok(self.m.matvec_t(cotangent))
    }
}

/// Linear map followed by a scaled tanh. Breaks the exact constant-delta
/// property of the linear toy so that the consistency term has something to
/// do in ablation and sensitivity fixtures.
pub struct ToyTanhEncoder<T: Scalar> {
    m: Matrix<T>,
    gain: T,
    cfg: ToyConfig,
    encoder_id: String,
}

impl<T: Scalar> ToyTanhEncoder<T> {
    fn check_image(&self, img: &ImageTensor<T>) -> Result<()> {
        let expected = (self.cfg.height, self.cfg.width, self.cfg.channels);
        if img.shape() != expected {
            return Err(EssenceError::ShapeMismatch {
                context: "ToyTanhEncoder::embed".into(),
                expected: vec![expected.0, expected.1, expected.2],
                got: vec![img.shape().0, img.shape().1, img.shape().2],
            });
        }
        Ok(())
    }

    fn preactivations(&self, img: &ImageTensor<T>) -> Vec<T> {
        self.m
            .matvec(img.data())
            .into_iter()
            .map(|u| u * self.gain)
            .collect()
    }
}

impl<T: Scalar> SemanticEncoder<T> for ToyTanhEncoder<T> {
    fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed(&self, img: &ImageTensor<T>) -> Result<SemanticEmbedding<T>> {
        self.check_image(img)?;
        let out: Vec<T> = self.preactivations(img).into_iter().map(|u| u.tanh()).collect();
        let norm = out.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if norm <= T::norm_epsilon() {
            return Err(EssenceError::ZeroEmbedding);
        }
        SemanticEmbedding::new(out, self.encoder_id.clone())
    }

    fn embed_vjp(&self, img: &ImageTensor<T>, cotangent: &[T]) -> Result<Vec<T>> {
        self.check_image(img)?;
        if cotangent.len() != self.cfg.embed_dim {
            return Err(EssenceError::dim_mismatch(
                "ToyTanhEncoder::embed_vjp",
                self.cfg.embed_dim,
                cotangent.len(),
            ));
        }
        // d tanh(g u)/du = g (1 - tanh^2)
        let scaled: Vec<T> = self
            .preactivations(img)
            .into_iter()
            .zip(cotangent)
            .map(|(u, &c)| {
                let t = u.tanh();
                c * self.gain * (T::one() - t * t)
            })
            .collect();
        Ok(self.m.matvec_t(&scaled))
    }
}

/// Fixed inverter: the Moore-Penrose pseudo-inverse of the generator matrix.
pub struct ToyInverter<T: Scalar> {
    pinv: Matrix<T>,
    cfg: ToyConfig,
    space_id: String,
}

impl<T: Scalar> Inverter<T> for ToyInverter<T> {
    fn space_id(&self) -> &str {
        &self.space_id
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.cfg.layers, self.cfg.dim)
    }

    fn invert(&self, img: &ImageTensor<T>) -> Result<LatentCode<T>> {
        let expected = (self.cfg.height, self.cfg.width, self.cfg.channels);
        if img.shape() != expected {
            return Err(EssenceError::ShapeMismatch {
                context: "ToyInverter::invert".into(),
                expected: vec![expected.0, expected.1, expected.2],
                got: vec![img.shape().0, img.shape().1, img.shape().2],
            });
        }
        let z = self.pinv.matvec(img.data());
        LatentCode::new(z, self.cfg.layers, self.cfg.dim, self.space_id.clone())
    }
}

/// Trainable linear inverter `invert(x) = W . flatten(x)`; the toy stand-in
/// for a pretrained inversion encoder. Initialized to the pseudo-inverse of
/// the paired generator, so its initial output is a true inversion.
pub struct ToyTrainableInverter<T: Scalar> {
    w: Matrix<T>,
    cfg: ToyConfig,
    space_id: String,
}

impl<T: Scalar> ToyTrainableInverter<T> {
    pub fn clone_params(&self) -> Vec<T> {
        self.w.data.clone()
    }
}

impl<T: Scalar> Inverter<T> for ToyTrainableInverter<T> {
    fn space_id(&self) -> &str {
        &self.space_id
    }

    fn latent_shape(&self) -> (usize, usize) {
        (self.cfg.layers, self.cfg.dim)
    }

    fn invert(&self, img: &ImageTensor<T>) -> Result<LatentCode<T>> {
        let expected = (self.cfg.height, self.cfg.width, self.cfg.channels);
        if img.shape() != expected {
            return Err(EssenceError::ShapeMismatch {
                context: "ToyTrainableInverter::invert".into(),
                expected: vec![expected.0, expected.1, expected.2],
                got: vec![img.shape().0, img.shape().1, img.shape().2],
            });
        }
        let z = self.w.matvec(img.data());
        LatentCode::new(z, self.cfg.layers, self.cfg.dim, self.space_id.clone())
    }
}

impl<T: Scalar> TrainableInverter<T> for ToyTrainableInverter<T> {
    fn params(&self) -> &[T] {
        &self.w.data
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.w.data
    }

    fn invert_vjp(&self, img: &ImageTensor<T>, latent_cotangent: &[T]) -> Result<Vec<T>> {
        if latent_cotangent.len() != self.cfg.latent_len() {
            return Err(EssenceError::dim_mismatch(
                "ToyTrainableInverter::invert_vjp",
                self.cfg.latent_len(),
                latent_cotangent.len(),
            ));
        }
        // d(Wx)/dW is the outer product cot . x^T, row-major like W.
        let x = img.data();
        let mut grad = vec![T::zero(); self.w.rows * self.w.cols];
        for (r, &c) in latent_cotangent.iter().enumerate() {
            let row = &mut grad[r * self.w.cols..(r + 1) * self.w.cols];
            for (g, &xv) in row.iter_mut().zip(x) {
                *g = c * xv;
            }
        }
        Ok(grad)
    }
}

/// Identity features: flattened pixels. Identity scores reduce to plain
/// image cosines, which the evaluation tests exploit.
pub struct ToyFaceEmbedder<T: Scalar> {
    pixel_len: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> FaceEmbedder<T> for ToyFaceEmbedder<T> {
    fn embed_dim(&self) -> usize {
        self.pixel_len
    }

    fn embed(&self, img: &ImageTensor<T>) -> Result<Vec<T>> {
        if img.data().len() != self.pixel_len {
            return Err(EssenceError::dim_mismatch(
                "ToyFaceEmbedder::embed",
                self.pixel_len,
                img.data().len(),
            ));
        }
        Ok(img.data().to_vec())
    }
}

/// Seeded random projection to the FID feature dimension.
pub struct ToyFeatureExtractor<T: Scalar> {
    p: Matrix<T>,
}

impl<T: Scalar> FeatureExtractor<T> for ToyFeatureExtractor<T> {
    fn feature_dim(&self) -> usize {
        self.p.rows
    }

    fn features(&self, img: &ImageTensor<T>) -> Result<Vec<T>> {
        if img.data().len() != self.p.cols {
            return Err(EssenceError::dim_mismatch(
                "ToyFeatureExtractor::features",
                self.p.cols,
                img.data().len(),
            ));
        }
        Ok(self.p.matvec(img.data()))
    }
}

/// The full toy model stack, built from one seed.
pub struct ToyLinearBackend<T: Scalar> {
    pub generator: ToyGenerator<T>,
    pub encoder: ToyEncoder<T>,
    pub tanh_encoder: ToyTanhEncoder<T>,
    pub inverter: ToyInverter<T>,
    pub face_embedder: ToyFaceEmbedder<T>,
    pub feature_extractor: ToyFeatureExtractor<T>,
    cfg: ToyConfig,
    a_f64: Vec<f64>,
    pinv_f64: Vec<f64>,
}

impl<T: Scalar> ToyLinearBackend<T> {
    pub fn new(cfg: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pixel = cfg.pixel_len();
        let latent = cfg.latent_len();
        // Fixed sampling order: A, then M, then the FID projection.
        let a: Matrix<f64> = Matrix::sample(&mut rng, pixel, latent);
        let m: Matrix<T> = Matrix::sample(&mut rng, cfg.embed_dim, pixel);
        let p: Matrix<T> = Matrix::sample(&mut rng, cfg.feature_dim, pixel);

        let pinv = pseudo_inverse(&a.data, pixel, latent);
        let space_id = cfg.space_id();
        let gain = T::from_f64_lossy(1.0 / ((pixel * latent) as f64).sqrt());

        Self {
            generator: ToyGenerator {
                a: Matrix::from_f64(a.data.clone(), pixel, latent),
                cfg,
                space_id: space_id.clone(),
            },
            encoder: ToyEncoder {
                m: m.clone(),
                cfg,
                encoder_id: format!("toy-enc-s{}", cfg.seed),
            },
            tanh_encoder: ToyTanhEncoder {
                m,
                gain,
                cfg,
                encoder_id: format!("toy-tanh-s{}", cfg.seed),
            },
            inverter: ToyInverter {
                pinv: Matrix::from_f64(pinv.clone(), latent, pixel),
                cfg,
                space_id: space_id.clone(),
            },
            face_embedder: ToyFaceEmbedder {
                pixel_len: pixel,
                _marker: std::marker::PhantomData,
            },
            feature_extractor: ToyFeatureExtractor { p },
            cfg,
            a_f64: a.data,
            pinv_f64: pinv,
        }
    }

    pub fn config(&self) -> ToyConfig {
        self.cfg
    }

    pub fn space_id(&self) -> String {
        self.cfg.space_id()
    }

    /// Fresh trainable inverter initialized to the pseudo-inverse of A,
    /// i.e. pretrained for inversion.
    pub fn trainable_inverter(&self) -> ToyTrainableInverter<T> {
        ToyTrainableInverter {
            w: Matrix::from_f64(self.pinv_f64.clone(), self.cfg.latent_len(), self.cfg.pixel_len()),
            cfg: self.cfg,
            space_id: self.cfg.space_id(),
        }
    }

    /// Rebuilds a trainable inverter from previously saved parameters
    /// (checkpoint restore).
    pub fn trainable_inverter_from_params(&self, params: Vec<T>) -> Result<ToyTrainableInverter<T>> {
        let rows = self.cfg.latent_len();
        let cols = self.cfg.pixel_len();
        if params.len() != rows * cols {
            return Err(EssenceError::ShapeMismatch {
                context: "trainable_inverter_from_params".into(),
                expected: vec![rows, cols],
                got: vec![params.len()],
            });
        }
        Ok(ToyTrainableInverter {
            w: Matrix {
                data: params,
                rows,
                cols,
            },
            cfg: self.cfg,
            space_id: self.cfg.space_id(),
        })
    }

    /// Generator matrix in f64, row-major `(pixels x latent)`. Test oracle
    /// access.
    pub fn generator_matrix(&self) -> &[f64] {
        &self.a_f64
    }
}

fn pseudo_inverse(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mat = nalgebra::DMatrix::from_row_slice(rows, cols, a);
    let pinv = mat
        .pseudo_inverse(1e-10)
        .expect("pseudo-inverse of the seeded generator matrix");
    // nalgebra stores column-major; emit row-major (cols x rows).
    let mut out = vec![0.0; cols * rows];
    for r in 0..cols {
        for c in 0..rows {
            out[r * rows + c] = pinv[(r, c)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::check_conformance;
    use approx::assert_abs_diff_eq;

    fn latent_from(cfg: &ToyConfig, vals: impl Fn(usize) -> f64) -> LatentCode<f64> {
        LatentCode::new(
            (0..cfg.latent_len()).map(vals).collect(),
            cfg.layers,
            cfg.dim,
            cfg.space_id(),
        )
        .unwrap()
    }

    #[test]
    fn decode_zero_is_zero_image() {
        let be = ToyLinearBackend::<f64>::new(ToyConfig::default());
        let z = LatentCode::zeros(3, 8, be.space_id());
        let img = be.generator.decode(&z).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_is_linear() {
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let z1 = latent_from(&cfg, |i| 0.3 * (i as f64) - 1.0);
        let z2 = latent_from(&cfg, |i| (i as f64 % 5.0) * 0.7);
        let zsum = latent_from(&cfg, |i| 0.3 * (i as f64) - 1.0 + (i as f64 % 5.0) * 0.7);
        let d1 = be.generator.decode(&z1).unwrap();
        let d2 = be.generator.decode(&z2).unwrap();
        let ds = be.generator.decode(&zsum).unwrap();
        for ((a, b), s) in d1.data().iter().zip(d2.data()).zip(ds.data()) {
            assert_abs_diff_eq!(a + b, *s, epsilon = 1e-12);
        }
    }

    #[test]
    fn decode_ones_matches_row_sums_seed7() {
        // Oracle: direct matrix multiply of A against the ones vector.
        let cfg = ToyConfig {
            layers: 2,
            dim: 3,
            height: 4,
            width: 4,
            channels: 1,
            embed_dim: 16,
            feature_dim: 8,
            seed: 7,
        };
        let be = ToyLinearBackend::<f64>::new(cfg);
        let z = latent_from(&cfg, |_| 1.0);
        let img = be.generator.decode(&z).unwrap();
        let a = be.generator_matrix();
        for (r, &px) in img.data().iter().enumerate() {
            let row_sum: f64 = a[r * 6..(r + 1) * 6].iter().sum();
            assert_abs_diff_eq!(px, row_sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn embed_zero_image_flagged() {
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let img = ImageTensor::from_raw(vec![0.0; cfg.pixel_len()], 8, 8, 1).unwrap();
        assert!(matches!(
            be.encoder.embed(&img).unwrap_err(),
            EssenceError::ZeroEmbedding
        ));
    }

    #[test]
    fn embed_is_linear() {
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let x1: Vec<f64> = (0..cfg.pixel_len()).map(|i| (i as f64 * 0.11).sin()).collect();
        let x2: Vec<f64> = (0..cfg.pixel_len()).map(|i| (i as f64 * 0.07).cos()).collect();
        let xs: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let i1 = ImageTensor::from_raw(x1, 8, 8, 1).unwrap();
        let i2 = ImageTensor::from_raw(x2, 8, 8, 1).unwrap();
        let is = ImageTensor::from_raw(xs, 8, 8, 1).unwrap();
        let e1 = be.encoder.raw_embed(&i1).unwrap();
        let e2 = be.encoder.raw_embed(&i2).unwrap();
        let es = be.encoder.raw_embed(&is).unwrap();
        for ((a, b), s) in e1.iter().zip(&e2).zip(&es) {
            assert_abs_diff_eq!(a + b, *s, epsilon = 1e-10);
        }
    }

    #[test]
    fn embed_of_decode_matches_composed_product() {
        // Oracle: (M . A) . flatten(z) computed independently.
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let z = latent_from(&cfg, |i| ((i * 13 % 7) as f64) * 0.25 - 0.5);
        let img = be.generator.decode(&z).unwrap();
        let e = be.encoder.raw_embed(&img).unwrap();
        let a = be.generator_matrix();
        let pixel = cfg.pixel_len();
        let latent = cfg.latent_len();
        // compose M.A row by row
        for (row_idx, &ev) in e.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..latent {
                let mut ak = 0.0;
                for p in 0..pixel {
                    ak += be.encoder.m.data[row_idx * pixel + p] * a[p * latent + k];
                }
                acc += ak * z.data()[k];
            }
            assert_abs_diff_eq!(ev, acc, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverter_roundtrip_within_tolerance() {
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let z = latent_from(&cfg, |i| (i as f64 * 0.31).sin() * 2.0);
        let img = be.generator.decode(&z).unwrap();
        let z_hat = be.inverter.invert(&img).unwrap();
        for (a, b) in z.data().iter().zip(z_hat.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_delta_property_linear() {
        // raw_embed(decode(z1+b)) - raw_embed(decode(z1)) is independent of z1.
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let z1 = latent_from(&cfg, |i| (i as f64 * 0.5).sin());
        let z2 = latent_from(&cfg, |i| (i as f64 * 0.9).cos() * 3.0);
        let shift = latent_from(&cfg, |i| 0.2 + 0.01 * i as f64);
        let delta = |z: &LatentCode<f64>| -> Vec<f64> {
            let plain = be.encoder.raw_embed(&be.generator.decode(z).unwrap()).unwrap();
            let zs = LatentCode::new(
                z.data().iter().zip(shift.data()).map(|(a, b)| a + b).collect(),
                cfg.layers,
                cfg.dim,
                cfg.space_id(),
            )
            .unwrap();
            let moved = be.encoder.raw_embed(&be.generator.decode(&zs).unwrap()).unwrap();
            moved.iter().zip(&plain).map(|(a, b)| a - b).collect()
        };
        let d1 = delta(&z1);
        let d2 = delta(&z2);
        for (a, b) in d1.iter().zip(&d2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn deterministic_at_fixed_seed() {
        let cfg = ToyConfig::default();
        let b1 = ToyLinearBackend::<f64>::new(cfg);
        let b2 = ToyLinearBackend::<f64>::new(cfg);
        let z = latent_from(&cfg, |i| i as f64 * 0.01);
        let i1 = b1.generator.decode(&z).unwrap();
        let i2 = b2.generator.decode(&z).unwrap();
        assert_eq!(i1.data(), i2.data());
    }

    #[test]
    fn conformance_suite_passes() {
        let be = ToyLinearBackend::<f64>::new(ToyConfig::default());
        check_conformance(&be.generator, &be.encoder, Some(&be.inverter)).unwrap();
        check_conformance(&be.generator, &be.tanh_encoder, Some(&be.inverter)).unwrap();
    }

    #[test]
    fn space_mismatch_rejected() {
        let be = ToyLinearBackend::<f64>::new(ToyConfig::default());
        let z = LatentCode::zeros(3, 8, "other-space");
        assert!(matches!(
            be.generator.decode(&z).unwrap_err(),
            EssenceError::SpaceMismatch { .. }
        ));
    }

    #[test]
    fn tanh_encoder_vjp_matches_finite_differences() {
        let cfg = ToyConfig::default();
        let be = ToyLinearBackend::<f64>::new(cfg);
        let x: Vec<f64> = (0..cfg.pixel_len()).map(|i| (i as f64 * 0.17).sin()).collect();
        let img = ImageTensor::from_raw(x.clone(), 8, 8, 1).unwrap();
        let cot: Vec<f64> = (0..cfg.embed_dim).map(|i| (i as f64 * 0.3).cos()).collect();
        let grad = be.tanh_encoder.embed_vjp(&img, &cot).unwrap();
        let h = 1e-6;
        for k in (0..cfg.pixel_len()).step_by(9) {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let f = |v: Vec<f64>| -> f64 {
                let img = ImageTensor::from_raw(v, 8, 8, 1).unwrap();
                let e = be.tanh_encoder.embed(&img).unwrap();
                e.data().iter().zip(&cot).map(|(a, b)| a * b).sum()
            };
            let fd = (f(xp) - f(xm)) / (2.0 * h);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-6);
        }
    }
}
