//! The differentiable loss terms and the combined objective.
//!
//! `similarity`: mean cosine distance between the target embedding and the
//! manipulated-source embeddings. `consistency`: mean pairwise cosine
//! distance between per-source embedding deltas, which forces the edit to be
//! source-agnostic. `l2`: Euclidean norm of the flattened shift. Embeddings
//! are not pre-normalized; normalization happens inside each cosine, exactly
//! where the norms sit in the formulas.

use serde::{Deserialize, Serialize};

use crate::backends::{Generator, SemanticEncoder};
use crate::core::{
    cosine_similarity, EssenceVector, ImageTensor, LatentCode, SemanticEmbedding, SourceBatch,
};
use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

/// Weights of the combined objective. Defaults are the published values
/// used for every experiment and both methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_consistency: f64,
    pub lambda_l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_consistency: 0.5,
            lambda_l2: 0.003,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_consistency < 0.0 || self.lambda_l2 < 0.0 {
            return Err(EssenceError::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Effective per-term coefficients. The standard objective is
/// `{1, lambda_consistency, lambda_l2}`; ablation variants zero exactly one
/// entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub similarity: f64,
    pub consistency: f64,
    pub l2: f64,
}

impl From<LossWeights> for TermWeights {
    fn from(w: LossWeights) -> Self {
        TermWeights {
            similarity: 1.0,
            consistency: w.lambda_consistency,
            l2: w.lambda_l2,
        }
    }
}

/// Raw term values and the weighted total of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct LossBreakdown<T> {
    pub similarity: T,
    pub consistency: T,
    pub l2: T,
    pub total: T,
}

/// Mean cosine distance of the target embedding to each manipulated
/// embedding.
pub fn similarity_loss<T: Scalar>(
    target_emb: &SemanticEmbedding<T>,
    manipulated_embs: &[SemanticEmbedding<T>],
) -> Result<T> {
    if manipulated_embs.is_empty() {
        return Err(EssenceError::EmptyBatch("similarity_loss".into()));
    }
    let mut acc = T::zero();
    for e in manipulated_embs {
        if e.encoder_id() != target_emb.encoder_id() {
            return Err(EssenceError::EncoderMismatch {
                expected: target_emb.encoder_id().to_string(),
                got: e.encoder_id().to_string(),
            });
        }
        acc += T::one() - cosine_similarity(target_emb.data(), e.data())?;
    }
    Ok(acc / T::from_usize(manipulated_embs.len()).unwrap())
}

/// Mean pairwise cosine distance between per-source embedding deltas
/// `manipulated[i] - source[i]`, normalized by the number of pairs.
pub fn consistency_loss<T: Scalar>(
    source_embs: &[SemanticEmbedding<T>],
    manipulated_embs: &[SemanticEmbedding<T>],
) -> Result<T> {
    let n = source_embs.len();
    if manipulated_embs.len() != n {
        return Err(EssenceError::dim_mismatch(
            "consistency_loss batch",
            n,
            manipulated_embs.len(),
        ));
    }
    if n < 2 {
        return Err(EssenceError::BatchTooSmall {
            context: "consistency_loss".into(),
            required: 2,
            got: n,
        });
    }
    let deltas: Vec<Vec<T>> = manipulated_embs
        .iter()
        .zip(source_embs)
        .map(|(m, s)| Ok(m.delta_from(s)?.data().to_vec()))
        .collect::<Result<_>>()?;
    let mut acc = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            // A zero delta means the edit did nothing for that source;
            // surfaced as ZeroVector by the cosine, not hidden.
            acc += T::one() - cosine_similarity(&deltas[i], &deltas[j])?;
        }
    }
    let pairs = n * (n - 1) / 2;
    Ok(acc / T::from_usize(pairs).unwrap())
}

/// Euclidean norm of the flattened essence vector.
pub fn l2_penalty<T: Scalar>(b: &EssenceVector<T>) -> T {
    b.l2_norm()
}

/// Precomputed quantities that do not depend on `b`: the target embedding
/// and the unmanipulated source embeddings. Built once per batch and reused
/// across optimizer iterations.
pub struct ObjectiveContext<T: Scalar> {
    pub target_emb: SemanticEmbedding<T>,
    pub sources: SourceBatch<T>,
    pub source_embs: Vec<SemanticEmbedding<T>>,
}

impl<T: Scalar> ObjectiveContext<T> {
    pub fn new(
        target: &ImageTensor<T>,
        sources: SourceBatch<T>,
        g: &dyn Generator<T>,
        c: &dyn SemanticEncoder<T>,
    ) -> Result<Self> {
        if sources.space_id() != g.space_id() {
            return Err(EssenceError::SpaceMismatch {
                expected: g.space_id().to_string(),
                got: sources.space_id().to_string(),
            });
        }
        let target_emb = c.embed(target)?;
        let source_embs = sources
            .latents()
            .iter()
            .map(|z| c.embed(&g.decode(z)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            target_emb,
            sources,
            source_embs,
        })
    }
}

/// d cos(a, e) / d e, for fixed `a`.
fn cosine_grad_wrt_second<T: Scalar>(a: &[T], e: &[T]) -> Result<Vec<T>> {
    let na = a.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
    let ne = e.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
    let eps = T::norm_epsilon();
    if na <= eps || ne <= eps {
        return Err(EssenceError::zero_vector(
            "cosine gradient",
            na.min(ne).to_f64_lossy(),
        ));
    }
    let cos = cosine_similarity(a, e)?;
    let inv = T::one() / (na * ne);
    let inv_e2 = T::one() / (ne * ne);
    Ok(a.iter()
        .zip(e)
        .map(|(&av, &ev)| av * inv - cos * ev * inv_e2)
        .collect())
}

/// Evaluates the weighted objective at a flat shift `b`, optionally with its
/// analytic gradient (backpropagated through the encoder and generator
/// VJPs).
pub fn evaluate_objective<T: Scalar>(
    b: &[T],
    ctx: &ObjectiveContext<T>,
    g: &dyn Generator<T>,
    c: &dyn SemanticEncoder<T>,
    tw: &TermWeights,
    with_grad: bool,
) -> Result<(LossBreakdown<T>, Option<Vec<T>>)> {
    let (l, d) = g.latent_shape();
    if b.len() != l * d {
        return Err(EssenceError::dim_mismatch(
            "evaluate_objective shift",
            l * d,
            b.len(),
        ));
    }
    let n = ctx.sources.len();
    if n < 2 && tw.consistency != 0.0 {
        return Err(EssenceError::BatchTooSmall {
            context: "objective consistency term".into(),
            required: 2,
            got: n,
        });
    }

    // Forward pass per source, keeping images for the backward VJPs.
    let mut shifted: Vec<LatentCode<T>> = Vec::with_capacity(n);
    let mut images: Vec<ImageTensor<T>> = Vec::with_capacity(n);
    let mut embs: Vec<Vec<T>> = Vec::with_capacity(n);
    for z in ctx.sources.latents() {
        let zs = LatentCode::new(
            z.data().iter().zip(b).map(|(&zv, &bv)| zv + bv).collect(),
            l,
            d,
            z.space_id(),
        )?;
        let img = g.decode(&zs)?;
        let e = c.embed(&img)?;
        embs.push(e.data().to_vec());
        images.push(img);
        shifted.push(zs);
    }

    let t = ctx.target_emb.data();
    let n_t = T::from_usize(n).unwrap();

    // Similarity term and its embedding cotangents.
    let mut sim = T::zero();
    let mut emb_cots: Vec<Vec<T>> = vec![vec![T::zero(); c.embed_dim()]; n];
    let w_sim = T::from_f64_lossy(tw.similarity);
    let w_cons = T::from_f64_lossy(tw.consistency);
    let w_l2 = T::from_f64_lossy(tw.l2);
    for (i, e) in embs.iter().enumerate() {
        sim += T::one() - cosine_similarity(t, e)?;
        if with_grad && tw.similarity != 0.0 {
            let gc = cosine_grad_wrt_second(t, e)?;
            for (acc, gv) in emb_cots[i].iter_mut().zip(&gc) {
                *acc -= w_sim / n_t * *gv;
            }
        }
    }
    sim /= n_t;

    // Consistency term over raw deltas.
    let mut cons = T::zero();
    if n >= 2 {
        let deltas: Vec<Vec<T>> = embs
            .iter()
            .zip(&ctx.source_embs)
            .map(|(e, e0)| e.iter().zip(e0.data()).map(|(&a, &b)| a - b).collect())
            .collect();
        let pairs = T::from_usize(n * (n - 1) / 2).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                cons += T::one() - cosine_similarity(&deltas[i], &deltas[j])?;
                if with_grad && tw.consistency != 0.0 {
                    let gi = cosine_grad_wrt_second(&deltas[j], &deltas[i])?;
                    let gj = cosine_grad_wrt_second(&deltas[i], &deltas[j])?;
                    let scale = w_cons / pairs;
                    for (acc, gv) in emb_cots[i].iter_mut().zip(&gi) {
                        *acc -= scale * *gv;
                    }
                    for (acc, gv) in emb_cots[j].iter_mut().zip(&gj) {
                        *acc -= scale * *gv;
                    }
                }
            }
        }
        cons /= pairs;
    }

    let l2 = b.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
    let total = w_sim * sim + w_cons * cons + w_l2 * l2;
    let breakdown = LossBreakdown {
        similarity: sim,
        consistency: cons,
        l2,
        total,
    };

    if !with_grad {
        return Ok((breakdown, None));
    }

    // Backward: embedding cotangents through encoder and generator VJPs.
    let mut grad = vec![T::zero(); l * d];
    for i in 0..n {
        if emb_cots[i].iter().all(|v| *v == T::zero()) {
            continue;
        }
        let img_cot = c.embed_vjp(&images[i], &emb_cots[i])?;
        let z_cot = g.decode_vjp(&shifted[i], &img_cot)?;
        for (gacc, gv) in grad.iter_mut().zip(&z_cot) {
            *gacc += *gv;
        }
    }
    if tw.l2 != 0.0 && l2 > T::norm_epsilon() {
        let scale = w_l2 / l2;
        for (gacc, &bv) in grad.iter_mut().zip(b) {
            *gacc += scale * bv;
        }
    }
    Ok((breakdown, Some(grad)))
}

/// Spec-shaped objective: full composition from an essence vector, a target
/// image and a source batch.
pub fn objective<T: Scalar>(
    b: &EssenceVector<T>,
    target: &ImageTensor<T>,
    sources: &SourceBatch<T>,
    g: &dyn Generator<T>,
    c: &dyn SemanticEncoder<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    w.validate()?;
    if b.space_id() != g.space_id() {
        return Err(EssenceError::SpaceMismatch {
            expected: g.space_id().to_string(),
            got: b.space_id().to_string(),
        });
    }
    let ctx = ObjectiveContext::new(target, sources.clone(), g, c)?;
    let (breakdown, _) = evaluate_objective(b.data(), &ctx, g, c, &TermWeights::from(*w), false)?;
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(v: &[f64]) -> SemanticEmbedding<f64> {
        SemanticEmbedding::new(v.to_vec(), "enc").unwrap()
    }

    #[test]
    fn similarity_zero_when_identical() {
        let t = emb(&[0.3, -0.7, 2.0]);
        let loss = similarity_loss(&t, &[t.clone(), t.clone()]).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn similarity_hand_example() {
        // target [1,0] vs {[0,1],[1,0]}: distances 1 and 0, mean 0.5
        let t = emb(&[1.0, 0.0]);
        let loss = similarity_loss(&t, &[emb(&[0.0, 1.0]), emb(&[1.0, 0.0])]).unwrap();
        assert_abs_diff_eq!(loss, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn similarity_n1_is_plain_cosine_distance() {
        let t = emb(&[1.0, 2.0, 3.0]);
        let m = emb(&[4.0, 5.0, 6.0]);
        let loss = similarity_loss(&t, std::slice::from_ref(&m)).unwrap();
        assert_abs_diff_eq!(loss, 0.025368153802923787, epsilon = 1e-12);
    }

    #[test]
    fn similarity_empty_batch() {
        let t = emb(&[1.0, 0.0]);
        assert!(matches!(
            similarity_loss::<f64>(&t, &[]).unwrap_err(),
            EssenceError::EmptyBatch(_)
        ));
    }

    #[test]
    fn similarity_encoder_mismatch() {
        let t = emb(&[1.0, 0.0]);
        let other = SemanticEmbedding::new(vec![1.0, 0.0], "other").unwrap();
        assert!(matches!(
            similarity_loss(&t, &[other]).unwrap_err(),
            EssenceError::EncoderMismatch { .. }
        ));
    }

    #[test]
    fn consistency_zero_for_identical_deltas() {
        let srcs = vec![emb(&[1.0, 1.0]), emb(&[0.0, 5.0]), emb(&[-2.0, 1.5])];
        let shift = [3.0, -1.0];
        let mans: Vec<_> = srcs
            .iter()
            .map(|s| emb(&[s.data()[0] + shift[0], s.data()[1] + shift[1]]))
            .collect();
        let loss = consistency_loss(&srcs, &mans).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn consistency_scale_invariant_deltas() {
        // deltas are positive multiples of [1, 2]
        let srcs = vec![emb(&[0.0, 0.0]), emb(&[1.0, 1.0]), emb(&[5.0, 5.0])];
        let mans = vec![
            emb(&[1.0, 2.0]), // delta [1,2]
            emb(&[3.0, 5.0]), // delta [2,4]
            emb(&[5.5, 6.0]), // delta [0.5,1]
        ];
        let loss = consistency_loss(&srcs, &mans).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn consistency_hand_example_three_pairs() {
        // deltas {[1,0],[0,1],[1,0]} -> (1/3)(1 + 0 + 1) = 2/3
        let srcs = vec![emb(&[0.0, 1.0]); 3];
        let mans = vec![
            emb(&[1.0, 1.0]),
            emb(&[0.0, 2.0]),
            emb(&[1.0, 1.0]),
        ];
        let loss = consistency_loss(&srcs, &mans).unwrap();
        assert_abs_diff_eq!(loss, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn consistency_batch_too_small() {
        let srcs = vec![emb(&[1.0, 0.0])];
        let mans = vec![emb(&[0.0, 1.0])];
        assert!(matches!(
            consistency_loss(&srcs, &mans).unwrap_err(),
            EssenceError::BatchTooSmall { .. }
        ));
    }

    #[test]
    fn consistency_zero_delta_surfaced() {
        let srcs = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let mans = vec![emb(&[1.0, 0.0]), emb(&[0.0, 2.0])];
        assert!(matches!(
            consistency_loss(&srcs, &mans).unwrap_err(),
            EssenceError::ZeroVector { .. }
        ));
    }

    #[test]
    fn consistency_permutation_invariant() {
        let srcs = vec![emb(&[1.0, 2.0]), emb(&[0.5, -1.0]), emb(&[3.0, 0.1])];
        let mans = vec![emb(&[2.0, 2.5]), emb(&[1.0, 0.0]), emb(&[3.5, 1.0])];
        let base = consistency_loss(&srcs, &mans).unwrap();
        let perm = [2usize, 0, 1];
        let srcs_p: Vec<_> = perm.iter().map(|&i| srcs[i].clone()).collect();
        let mans_p: Vec<_> = perm.iter().map(|&i| mans[i].clone()).collect();
        let permuted = consistency_loss(&srcs_p, &mans_p).unwrap();
        assert_abs_diff_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn l2_examples() {
        use crate::core::{Provenance, ProvenanceMethod};
        let prov = Provenance {
            method: ProvenanceMethod::Optimizer,
            target_digest: "t".into(),
            config_digest: "c".into(),
        };
        let zero = EssenceVector::new(vec![0.0; 6], 2, 3, "s", prov.clone()).unwrap();
        assert_abs_diff_eq!(l2_penalty(&zero), 0.0, epsilon = 1e-15);
        let single = EssenceVector::new(vec![0.0, 3.0, 0.0, 0.0], 2, 2, "s", prov.clone()).unwrap();
        assert_abs_diff_eq!(l2_penalty(&single), 3.0, epsilon = 1e-15);
        let ones = EssenceVector::new(vec![1.0; 6], 2, 3, "s", prov).unwrap();
        assert_abs_diff_eq!(l2_penalty(&ones), 6.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_total_composition() {
        // similarity 0.4, consistency 0.2, l2 10 with (0.5, 0.003):
        // 0.4 + 0.1 + 0.03 = 0.53
        let total = 0.4 + 0.5 * 0.2 + 0.003 * 10.0;
        assert_abs_diff_eq!(total, 0.53, epsilon = 1e-15);
    }

    #[test]
    fn default_weights_match_published_values() {
        let w = LossWeights::default();
        assert_eq!(w.lambda_consistency, 0.5);
        assert_eq!(w.lambda_l2, 0.003);
    }
}
