//! Metric suite and harnesses: identity scores, semantic scores, FID,
//! two-stage aggregation, interpretability delta extraction, and the
//! loss-ablation / batch-size-sensitivity runners.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backends::{FaceEmbedder, FeatureExtractor, Generator, Inverter, SemanticEncoder};
use crate::core::{cosine_similarity, ImageTensor, LatentCode, SemanticDelta, SourceBatch};
use crate::error::{EssenceError, Result};
use crate::essv::atomic_write;
use crate::losses::{consistency_loss, LossWeights, TermWeights};
use crate::optimizer::{apply_essence, optimize_essence_weighted, OptimizerConfig};
use crate::scalar::Scalar;

/// Per-(target, source) metric row. `sem_blip` is absent when no second
/// semantic encoder is configured; it is never duplicated from the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub target_id: String,
    pub source_id: String,
    pub id_source: f64,
    pub id_target: f64,
    pub sem_clip: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sem_blip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PerTargetMeans {
    pub id_source: f64,
    pub id_target: f64,
    pub sem_clip: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sem_blip: Option<f64>,
    pub num_sources: usize,
}

/// Two-stage aggregate: per-target means, then mean and std across targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_target: BTreeMap<String, PerTargetMeans>,
    pub id_source: MeanStd,
    pub id_target: MeanStd,
    pub sem_clip: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sem_blip: Option<MeanStd>,
    pub fid_per_target: BTreeMap<String, f64>,
    pub config_digest: String,
}

/// Identity scores of a manipulation against its source and the target.
pub fn id_scores<T: Scalar>(
    i_s: &ImageTensor<T>,
    i_t: &ImageTensor<T>,
    i_st: &ImageTensor<T>,
    r: &dyn FaceEmbedder<T>,
) -> Result<(f64, f64)> {
    let e_s = r.embed(i_s)?;
    let e_t = r.embed(i_t)?;
    let e_st = r.embed(i_st)?;
    let id_source = cosine_similarity(&e_s, &e_st)?.to_f64_lossy();
    let id_target = cosine_similarity(&e_t, &e_st)?.to_f64_lossy();
    Ok((id_source, id_target))
}

/// Cosine of the semantic embeddings of target and manipulation.
pub fn semantic_score<T: Scalar>(
    i_t: &ImageTensor<T>,
    i_st: &ImageTensor<T>,
    c: &dyn SemanticEncoder<T>,
) -> Result<f64> {
    let e_t = c.embed(i_t)?;
    let e_st = c.embed(i_st)?;
    Ok(cosine_similarity(e_t.data(), e_st.data())?.to_f64_lossy())
}

/// Raw embedding difference `C(I_st) - C(I_s)`, exported for external
/// decoders; no text decoding here.
pub fn semantic_delta<T: Scalar>(
    i_s: &ImageTensor<T>,
    i_st: &ImageTensor<T>,
    c: &dyn SemanticEncoder<T>,
) -> Result<SemanticDelta<T>> {
    let e_st = c.embed(i_st)?;
    let e_s = c.embed(i_s)?;
    e_st.delta_from(&e_s)
}

#[derive(Debug, Serialize, Deserialize)]
struct DeltaFile {
    encoder_id: String,
    data: Vec<f64>,
}

pub fn write_delta<T: Scalar>(path: &Path, delta: &SemanticDelta<T>) -> Result<()> {
    let file = DeltaFile {
        encoder_id: delta.encoder_id().to_string(),
        data: delta.data().iter().map(|v| v.to_f64_lossy()).collect(),
    };
    atomic_write(path, serde_json::to_string_pretty(&file)?.as_bytes())
}

pub fn read_delta(path: &Path) -> Result<(String, Vec<f64>)> {
    let file: DeltaFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok((file.encoder_id, file.data))
}

/// Mean vector and (unbiased) covariance of a feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`, symmetric.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(EssenceError::BatchTooSmall {
                context: "GaussianStats::fit".into(),
                required: 2,
                got: features.len(),
            });
        }
        let n = features.len();
        let dim = features[0].len();
        let mut mean = vec![0.0; dim];
        for f in features {
            if f.len() != dim {
                return Err(EssenceError::dim_mismatch("GaussianStats::fit", dim, f.len()));
            }
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; dim * dim];
        for f in features {
            for i in 0..dim {
                let di = f[i] - mean[i];
                for j in 0..dim {
                    cov[i * dim + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for c in &mut cov {
            *c /= (n - 1) as f64;
        }
        Ok(GaussianStats { mean, cov })
    }
}

fn symmetric_sqrt(mat: &DMatrix<f64>) -> DMatrix<f64> {
    // Symmetrize, eigendecompose, clamp negative eigenvalues at zero.
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussian fits:
/// `|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2})`.
pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let dim = a.dim();
    if b.dim() != dim {
        return Err(EssenceError::dim_mismatch("fid_from_stats", dim, b.dim()));
    }
    let sa = DMatrix::from_row_slice(dim, dim, &a.cov);
    let sb = DMatrix::from_row_slice(dim, dim, &b.cov);
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let compute = |sa: &DMatrix<f64>, sb: &DMatrix<f64>| -> f64 {
        let sa_half = symmetric_sqrt(sa);
        let inner = &sa_half * sb * &sa_half;
        let sym = (&inner + inner.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
        sa.trace() + sb.trace() - 2.0 * tr_sqrt
    };

    let mut cov_term = compute(&sa, &sb);
    if !cov_term.is_finite() {
        // Diagonal jitter, then give up.
        let jitter = DMatrix::from_diagonal_element(dim, dim, 1e-6);
        cov_term = compute(&(&sa + &jitter), &(&sb + &jitter));
        if !cov_term.is_finite() {
            return Err(EssenceError::SingularCovariance);
        }
    }
    // The exact distance is non-negative; numeric round-off may land
    // slightly below zero for near-identical statistics.
    Ok((mean_term + cov_term).max(0.0))
}

/// FID of two feature sets, each row one sample.
pub fn fid(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    fid_from_stats(&GaussianStats::fit(set_a)?, &GaussianStats::fit(set_b)?)
}

/// Two-stage aggregation: mean over sources within each target, then mean
/// and std across the per-target means. `expected_pairs`, when given,
/// must be covered exactly once each.
pub fn aggregate(
    records: &[MetricRecord],
    fids: &BTreeMap<String, f64>,
    expected_pairs: Option<&[(String, String)]>,
    config_digest: &str,
) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(EssenceError::EmptyBatch("aggregate".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if !seen.insert((r.target_id.clone(), r.source_id.clone())) {
            return Err(EssenceError::DuplicatePair {
                target_id: r.target_id.clone(),
                source_id: r.source_id.clone(),
            });
        }
    }
    if let Some(expected) = expected_pairs {
        for (t, s) in expected {
            if !seen.contains(&(t.clone(), s.clone())) {
                return Err(EssenceError::MissingPair {
                    target_id: t.clone(),
                    source_id: s.clone(),
                });
            }
        }
    }
    let has_blip = records[0].sem_blip.is_some();
    if records.iter().any(|r| r.sem_blip.is_some() != has_blip) {
        return Err(EssenceError::InvalidConfig(
            "sem_blip present on some records but not all".into(),
        ));
    }

    let mut per_target: BTreeMap<String, PerTargetMeans> = BTreeMap::new();
    let mut by_target: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        by_target.entry(&r.target_id).or_default().push(r);
    }
    for (tid, rows) in &by_target {
        let n = rows.len() as f64;
        per_target.insert(
            tid.to_string(),
            PerTargetMeans {
                id_source: rows.iter().map(|r| r.id_source).sum::<f64>() / n,
                id_target: rows.iter().map(|r| r.id_target).sum::<f64>() / n,
                sem_clip: rows.iter().map(|r| r.sem_clip).sum::<f64>() / n,
                sem_blip: has_blip
                    .then(|| rows.iter().map(|r| r.sem_blip.unwrap()).sum::<f64>() / n),
                num_sources: rows.len(),
            },
        );
    }

    let mean_std = |vals: Vec<f64>| -> MeanStd {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    };

    let report = EvaluationReport {
        id_source: mean_std(per_target.values().map(|p| p.id_source).collect()),
        id_target: mean_std(per_target.values().map(|p| p.id_target).collect()),
        sem_clip: mean_std(per_target.values().map(|p| p.sem_clip).collect()),
        sem_blip: has_blip
            .then(|| mean_std(per_target.values().map(|p| p.sem_blip.unwrap()).collect())),
        per_target,
        fid_per_target: fids.clone(),
        config_digest: config_digest.to_string(),
    };
    Ok(report)
}

/// Renders the per-pair records as CSV. `scale_100` multiplies cosine
/// scores by 100 for presentation; raw cosines are the stored form.
pub fn records_to_csv(records: &[MetricRecord], scale_100: bool) -> String {
    let mut out = String::from("target_id,source_id,id_source,id_target,sem_clip,sem_blip\n");
    let k = if scale_100 { 100.0 } else { 1.0 };
    let mut rows: Vec<&MetricRecord> = records.iter().collect();
    rows.sort_by(|a, b| (&a.target_id, &a.source_id).cmp(&(&b.target_id, &b.source_id)));
    for r in rows {
        let blip = r
            .sem_blip
            .map(|v| format!("{}", v * k))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.target_id,
            r.source_id,
            r.id_source * k,
            r.id_target * k,
            r.sem_clip * k,
            blip
        ));
    }
    out
}

pub fn fids_to_csv(fids: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("target_id,fid\n");
    for (t, v) in fids {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoConsistency,
    NoSimilarity,
    NoL2,
}

impl AblationVariant {
    pub fn term_weights(&self, base: LossWeights) -> TermWeights {
        let mut tw = TermWeights::from(base);
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoConsistency => tw.consistency = 0.0,
            AblationVariant::NoSimilarity => tw.similarity = 0.0,
            AblationVariant::NoL2 => tw.l2 = 0.0,
        }
        tw
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoConsistency => "no_consistency",
            AblationVariant::NoSimilarity => "no_similarity",
            AblationVariant::NoL2 => "no_l2",
        }
    }
}

/// Everything a harness run needs: named targets, the training source
/// batch, held-out evaluation sources, and the frozen model stack.
pub struct HarnessFixture<'a, T: Scalar> {
    pub targets: Vec<(String, ImageTensor<T>)>,
    /// Pool the training batch is drawn from (first `cfg.batch_size`, in
    /// order; the caller controls sampling).
    pub train_sources: SourceBatch<T>,
    pub holdout_sources: Vec<(String, LatentCode<T>)>,
    pub generator: &'a dyn Generator<T>,
    pub semantic_encoder: &'a dyn SemanticEncoder<T>,
    pub face_embedder: &'a dyn FaceEmbedder<T>,
    pub feature_extractor: Option<&'a dyn FeatureExtractor<T>>,
    /// Reference image set for per-target FID; empty disables FID.
    pub fid_reference: Vec<ImageTensor<T>>,
    pub inverter: Option<&'a dyn Inverter<T>>,
    pub optimizer_cfg: OptimizerConfig,
}

/// Per-variant harness output: the metric report plus the quantities the
/// directional checks compare.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub variant: String,
    pub report: EvaluationReport,
    pub essence_norms: BTreeMap<String, f64>,
    pub holdout_consistency: BTreeMap<String, f64>,
}

fn evaluate_essence_on_holdout<T: Scalar>(
    fixture: &HarnessFixture<'_, T>,
    target_id: &str,
    target: &ImageTensor<T>,
    b: &crate::core::EssenceVector<T>,
) -> Result<(Vec<MetricRecord>, Option<f64>, f64)> {
    let g = fixture.generator;
    let c = fixture.semantic_encoder;
    let mut records = Vec::new();
    let mut source_embs = Vec::new();
    let mut manip_embs = Vec::new();
    let mut manip_features = Vec::new();
    for (sid, z) in &fixture.holdout_sources {
        let i_s = g.decode(z)?;
        let i_st = apply_essence(z, b, g)?;
        let (id_source, id_target) = id_scores(&i_s, target, &i_st, fixture.face_embedder)?;
        let sem_clip = semantic_score(target, &i_st, c)?;
        records.push(MetricRecord {
            target_id: target_id.to_string(),
            source_id: sid.clone(),
            id_source,
            id_target,
            sem_clip,
            sem_blip: None,
        });
        source_embs.push(c.embed(&i_s)?);
        manip_embs.push(c.embed(&i_st)?);
        if let Some(fx) = fixture.feature_extractor {
            manip_features.push(fx.features(&i_st)?.iter().map(|v| v.to_f64_lossy()).collect());
        }
    }
    let holdout_cons = consistency_loss(&source_embs, &manip_embs)?.to_f64_lossy();
    let fid_value = if let (Some(fx), false) = (fixture.feature_extractor, fixture.fid_reference.is_empty()) {
        let reference: Vec<Vec<f64>> = fixture
            .fid_reference
            .iter()
            .map(|img| Ok(fx.features(img)?.iter().map(|v| v.to_f64_lossy()).collect()))
            .collect::<Result<_>>()?;
        Some(fid(&manip_features, &reference)?)
    } else {
        None
    };
    Ok((records, fid_value, holdout_cons))
}

/// Optimizes every fixture target under one loss variant, then evaluates
/// on the held-out sources.
pub fn ablation_run<T: Scalar>(
    variant: AblationVariant,
    fixture: &HarnessFixture<'_, T>,
) -> Result<AblationOutcome> {
    let tw = variant.term_weights(fixture.optimizer_cfg.weights);
    let mut records = Vec::new();
    let mut fids = BTreeMap::new();
    let mut norms = BTreeMap::new();
    let mut holdout_cons = BTreeMap::new();
    for (tid, target) in &fixture.targets {
        let (b, _) = optimize_essence_weighted(
            target,
            &fixture.train_sources,
            fixture.generator,
            fixture.semantic_encoder,
            fixture.inverter,
            &fixture.optimizer_cfg,
            &tw,
        )?;
        norms.insert(tid.clone(), b.l2_norm().to_f64_lossy());
        let (mut rs, fid_value, cons) = evaluate_essence_on_holdout(fixture, tid, target, &b)?;
        records.append(&mut rs);
        if let Some(f) = fid_value {
            fids.insert(tid.clone(), f);
        }
        holdout_cons.insert(tid.clone(), cons);
    }
    let report = aggregate(&records, &fids, None, &fixture.optimizer_cfg.digest())?;
    Ok(AblationOutcome {
        variant: variant.name().to_string(),
        report,
        essence_norms: norms,
        holdout_consistency: holdout_cons,
    })
}

/// One optimization + evaluation per batch size, shared seed and targets.
/// The training batch for each N is the first N latents of the fixture's
/// training batch, so N must not exceed it.
pub fn sensitivity_run<T: Scalar>(
    n_values: &[usize],
    fixture: &HarnessFixture<'_, T>,
) -> Result<BTreeMap<usize, EvaluationReport>> {
    for &n in n_values {
        if n < 2 {
            return Err(EssenceError::BatchTooSmall {
                context: "sensitivity_run".into(),
                required: 2,
                got: n,
            });
        }
        if n > fixture.train_sources.len() {
            return Err(EssenceError::BatchTooSmall {
                context: "sensitivity_run: training pool".into(),
                required: n,
                got: fixture.train_sources.len(),
            });
        }
    }
    let mut out = BTreeMap::new();
    for &n in n_values {
        let sources = SourceBatch::new(
            fixture.train_sources.latents()[..n].to_vec(),
            format!("{}-n{n}", fixture.train_sources.batch_id()),
        )?;
        let cfg = OptimizerConfig {
            batch_size: n,
            ..fixture.optimizer_cfg.clone()
        };
        let tw = TermWeights::from(cfg.weights);
        let mut records = Vec::new();
        let mut fids = BTreeMap::new();
        for (tid, target) in &fixture.targets {
            let (b, _) = optimize_essence_weighted(
                target,
                &sources,
                fixture.generator,
                fixture.semantic_encoder,
                fixture.inverter,
                &cfg,
                &tw,
            )?;
            let (mut rs, fid_value, _) = evaluate_essence_on_holdout(fixture, tid, target, &b)?;
            records.append(&mut rs);
            if let Some(f) = fid_value {
                fids.insert(tid.clone(), f);
            }
        }
        out.insert(n, aggregate(&records, &fids, None, &cfg.digest())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::{ToyConfig, ToyLinearBackend};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy() -> ToyLinearBackend<f64> {
        ToyLinearBackend::new(ToyConfig::default())
    }

    fn image(be: &ToyLinearBackend<f64>, seed: u64) -> ImageTensor<f64> {
        let cfg = be.config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = LatentCode::new(
            (0..cfg.latent_len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>(),
            cfg.layers,
            cfg.dim,
            be.space_id(),
        )
        .unwrap();
        be.generator.decode(&z).unwrap()
    }

    #[test]
    fn id_scores_self_similarity() {
        let be = toy();
        let i_s = image(&be, 1);
        let i_t = image(&be, 2);
        let (src, tgt) = id_scores(&i_s, &i_t, &i_s, &be.face_embedder).unwrap();
        assert_abs_diff_eq!(src, 1.0, epsilon = 1e-12);
        assert!(tgt < 1.0);
        let (src2, tgt2) = id_scores(&i_s, &i_t, &i_t, &be.face_embedder).unwrap();
        assert_abs_diff_eq!(tgt2, 1.0, epsilon = 1e-12);
        assert!(src2 < 1.0);
    }

    #[test]
    fn toy_face_scores_are_plain_image_cosines() {
        let be = toy();
        let i_s = image(&be, 3);
        let i_t = image(&be, 4);
        let i_st = image(&be, 5);
        let (src, tgt) = id_scores(&i_s, &i_t, &i_st, &be.face_embedder).unwrap();
        let direct_s = cosine_similarity(i_s.data(), i_st.data()).unwrap();
        let direct_t = cosine_similarity(i_t.data(), i_st.data()).unwrap();
        assert_abs_diff_eq!(src, direct_s, epsilon = 1e-12);
        assert_abs_diff_eq!(tgt, direct_t, epsilon = 1e-12);
    }

    #[test]
    fn semantic_score_is_embedding_cosine() {
        let be = toy();
        let i_t = image(&be, 6);
        let i_st = image(&be, 7);
        assert_abs_diff_eq!(semantic_score(&i_t, &i_t, &be.encoder).unwrap(), 1.0, epsilon = 1e-12);
        let s = semantic_score(&i_t, &i_st, &be.encoder).unwrap();
        let e_t = be.encoder.embed(&i_t).unwrap();
        let e_st = be.encoder.embed(&i_st).unwrap();
        let direct = cosine_similarity(e_t.data(), e_st.data()).unwrap();
        assert_abs_diff_eq!(s, direct, epsilon = 1e-12);
    }

    #[test]
    fn semantic_delta_linearity_and_roundtrip() {
        let be = toy();
        let i_s = image(&be, 8);
        let i_st = image(&be, 9);
        let delta = semantic_delta(&i_s, &i_st, &be.encoder).unwrap();
        // toy linear encoder: delta = M . (i_st - i_s)
        let diff: Vec<f64> = i_st
            .data()
            .iter()
            .zip(i_s.data())
            .map(|(a, b)| a - b)
            .collect();
        let diff_img = ImageTensor::from_raw(diff, 8, 8, 1).unwrap();
        let expected = be.encoder.raw_embed(&diff_img).unwrap();
        for (a, b) in delta.data().iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("delta.json");
        write_delta(&path, &delta).unwrap();
        let (enc_id, vals) = read_delta(&path).unwrap();
        assert_eq!(enc_id, delta.encoder_id());
        assert_eq!(vals, delta.data());
    }

    #[test]
    fn self_delta_is_zero() {
        let be = toy();
        let i_s = image(&be, 10);
        let delta = semantic_delta(&i_s, &i_s, &be.encoder).unwrap();
        assert!(delta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fid_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let d = fid(&set, &set).unwrap();
        assert!(d <= 1e-6, "fid(X,X) = {d}");
    }

    #[test]
    fn fid_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..35)
            .map(|_| {
                (0..8)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v * 2.0 + 1.0
                    })
                    .collect()
            })
            .collect();
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-8);
        assert!(ab > 0.0);
    }

    #[test]
    fn fid_matches_closed_form_diagonal_gaussians() {
        // Commuting (diagonal) covariances: distance is
        // |mu_a - mu_b|^2 + sum_k (sqrt(va_k) - sqrt(vb_k))^2.
        let dim = 8;
        let mu_a: Vec<f64> = (0..dim).map(|i| i as f64 * 0.5).collect();
        let mu_b: Vec<f64> = (0..dim).map(|i| 1.0 - i as f64 * 0.25).collect();
        let va: Vec<f64> = (0..dim).map(|i| 0.5 + i as f64 * 0.3).collect();
        let vb: Vec<f64> = (0..dim).map(|i| 2.0 - i as f64 * 0.1).collect();
        let diag = |v: &[f64]| {
            let mut cov = vec![0.0; dim * dim];
            for (i, &x) in v.iter().enumerate() {
                cov[i * dim + i] = x;
            }
            cov
        };
        let a = GaussianStats {
            mean: mu_a.clone(),
            cov: diag(&va),
        };
        let b = GaussianStats {
            mean: mu_b.clone(),
            cov: diag(&vb),
        };
        let expected: f64 = mu_a
            .iter()
            .zip(&mu_b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            + va.iter()
                .zip(&vb)
                .map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
                .sum::<f64>();
        let got = fid_from_stats(&a, &b).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-3);
    }

    fn rec(t: &str, s: &str, sem: f64) -> MetricRecord {
        MetricRecord {
            target_id: t.into(),
            source_id: s.into(),
            id_source: 0.9,
            id_target: 0.4,
            sem_clip: sem,
            sem_blip: None,
        }
    }

    #[test]
    fn aggregate_two_stage_hand_example() {
        let records = vec![
            rec("t1", "s1", 0.2),
            rec("t1", "s2", 0.4),
            rec("t2", "s1", 0.6),
            rec("t2", "s2", 0.8),
        ];
        let report = aggregate(&records, &BTreeMap::new(), None, "d").unwrap();
        assert_abs_diff_eq!(report.per_target["t1"].sem_clip, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(report.per_target["t2"].sem_clip, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(report.sem_clip.mean, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_single_target_std_zero() {
        let records = vec![rec("t1", "s1", 0.2), rec("t1", "s2", 0.6)];
        let report = aggregate(&records, &BTreeMap::new(), None, "d").unwrap();
        assert_abs_diff_eq!(report.sem_clip.mean, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(report.sem_clip.std, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_order_independent() {
        let mut records = vec![
            rec("t1", "s1", 0.2),
            rec("t1", "s2", 0.4),
            rec("t2", "s1", 0.6),
            rec("t2", "s2", 0.8),
        ];
        let a = aggregate(&records, &BTreeMap::new(), None, "d").unwrap();
        records.reverse();
        let b = aggregate(&records, &BTreeMap::new(), None, "d").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_differs_from_pooled_on_unbalanced() {
        // t1 has 3 sources, t2 has 1: pooled mean != two-stage mean.
        let records = vec![
            rec("t1", "s1", 0.0),
            rec("t1", "s2", 0.0),
            rec("t1", "s3", 0.0),
            rec("t2", "s1", 1.0),
        ];
        let report = aggregate(&records, &BTreeMap::new(), None, "d").unwrap();
        let pooled = 0.25;
        assert_abs_diff_eq!(report.sem_clip.mean, 0.5, epsilon = 1e-12);
        assert!((report.sem_clip.mean - pooled).abs() > 0.1);
    }

    #[test]
    fn aggregate_duplicate_pair_rejected() {
        let records = vec![rec("t1", "s1", 0.2), rec("t1", "s1", 0.4)];
        assert!(matches!(
            aggregate(&records, &BTreeMap::new(), None, "d").unwrap_err(),
            EssenceError::DuplicatePair { .. }
        ));
    }

    #[test]
    fn aggregate_missing_pair_rejected() {
        let records = vec![rec("t1", "s1", 0.2)];
        let expected = vec![
            ("t1".to_string(), "s1".to_string()),
            ("t1".to_string(), "s2".to_string()),
        ];
        assert!(matches!(
            aggregate(&records, &BTreeMap::new(), Some(&expected), "d").unwrap_err(),
            EssenceError::MissingPair { .. }
        ));
    }

    #[test]
    fn csv_is_deterministic_and_scaled() {
        let records = vec![rec("t2", "s1", 0.5), rec("t1", "s1", 0.25)];
        let raw = records_to_csv(&records, false);
        let again = records_to_csv(&records, false);
        assert_eq!(raw, again);
        assert!(raw.starts_with("target_id,source_id,"));
        // sorted by (target, source)
        let lines: Vec<&str> = raw.lines().collect();
        assert!(lines[1].starts_with("t1,"));
        let scaled = records_to_csv(&records, true);
        assert!(scaled.contains("25")); // 0.25 * 100
    }
}
