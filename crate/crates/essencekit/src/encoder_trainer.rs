//! Fine-tunes a pretrained inversion encoder into an essence encoder: a
//! single forward pass emits the essence vector for any target, amortizing
//! the per-target optimization.
//!
//! Each step samples one target and a fresh batch of sources, sets
//! `b = invert(target)`, evaluates the same objective the optimizer uses,
//! and updates only the inverter parameters. Generator and semantic encoder
//! stay frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Generator, SemanticEncoder, TrainableInverter};
use crate::core::{EssenceVector, ImageTensor, Provenance, ProvenanceMethod, SourceBatch};
use crate::error::{EssenceError, Result};
use crate::losses::{evaluate_objective, LossBreakdown, LossWeights, ObjectiveContext, TermWeights};
use crate::optimizer::{digest_image, digest_json, Adam};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub targets_per_step: usize,
    pub source_batch_size: usize,
    pub weights: LossWeights,
    pub train_set_size: usize,
    pub eval_set_size: usize,
    pub seed: u64,
    /// Held-out evaluation cadence in steps.
    pub eval_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            iterations: 3000,
            targets_per_step: 1,
            source_batch_size: 5,
            weights: LossWeights::default(),
            train_set_size: 200,
            eval_set_size: 50,
            seed: 0,
            eval_every: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(EssenceError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.source_batch_size < 2 {
            return Err(EssenceError::BatchTooSmall {
                context: "EncoderTrainConfig.source_batch_size".into(),
                required: 2,
                got: self.source_batch_size,
            });
        }
        if self.targets_per_step != 1 {
            return Err(EssenceError::InvalidConfig(
                "targets_per_step other than 1 is not supported".into(),
            ));
        }
        self.weights.validate()
    }

    pub fn digest(&self) -> String {
        digest_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct EncoderTrainTrace<T> {
    pub steps: Vec<LossBreakdown<T>>,
    /// `(step, mean held-out total objective)` at the configured cadence.
    pub eval_points: Vec<(usize, f64)>,
}

/// A fine-tuned inverter packaged with its training provenance. `extract`
/// is a pure forward pass, reentrant and shareable after training.
pub struct EssenceEncoder<T: Scalar, I: TrainableInverter<T>> {
    inverter: I,
    config_digest: String,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar, I: TrainableInverter<T>> EssenceEncoder<T, I> {
    pub fn new(inverter: I, config_digest: String) -> Self {
        Self {
            inverter,
            config_digest,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn inverter(&self) -> &I {
        &self.inverter
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    /// Single forward pass; no optimization.
    pub fn extract(&self, target: &ImageTensor<T>) -> Result<EssenceVector<T>> {
        let z = self.inverter.invert(target)?;
        let (l, d) = z.shape();
        EssenceVector::new(
            z.data().to_vec(),
            l,
            d,
            z.space_id(),
            Provenance {
                method: ProvenanceMethod::Encoder,
                target_digest: digest_image(target),
                config_digest: self.config_digest.clone(),
            },
        )
    }
}

/// Mean total objective over targets with `b = invert(target)`, against a
/// fixed source batch. The held-out metric used during and after training.
pub fn mean_objective_over_targets<T: Scalar>(
    inv: &dyn TrainableInverter<T>,
    targets: &[ImageTensor<T>],
    sources: &SourceBatch<T>,
    g: &dyn Generator<T>,
    c: &dyn SemanticEncoder<T>,
    weights: &LossWeights,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(EssenceError::EmptyBatch("mean_objective_over_targets".into()));
    }
    let tw = TermWeights::from(*weights);
    let mut acc = 0.0;
    for t in targets {
        let b = inv.invert(t)?;
        let ctx = ObjectiveContext::new(t, sources.clone(), g, c)?;
        let (breakdown, _) = evaluate_objective(b.data(), &ctx, g, c, &tw, false)?;
        acc += breakdown.total.to_f64_lossy();
    }
    Ok(acc / targets.len() as f64)
}

/// Fine-tunes the inverter in place and returns it as an essence encoder.
///
/// `source_pool` supplies the per-step source batches; `eval_targets` is
/// the held-out set scored every `cfg.eval_every` steps against a fixed
/// seeded source batch.
pub fn finetune_essence_encoder<T: Scalar, I: TrainableInverter<T>>(
    mut inv: I,
    train_targets: &[ImageTensor<T>],
    eval_targets: &[ImageTensor<T>],
    source_pool: &[crate::core::LatentCode<T>],
    g: &dyn Generator<T>,
    c: &dyn SemanticEncoder<T>,
    cfg: &EncoderTrainConfig,
) -> Result<(EssenceEncoder<T, I>, EncoderTrainTrace<T>)> {
    cfg.validate()?;
    if train_targets.is_empty() {
        return Err(EssenceError::EmptyBatch("finetune: train_targets".into()));
    }
    if source_pool.len() < cfg.source_batch_size {
        return Err(EssenceError::BatchTooSmall {
            context: "finetune: source_pool".into(),
            required: cfg.source_batch_size,
            got: source_pool.len(),
        });
    }
    if inv.params().is_empty() {
        return Err(EssenceError::NonTrainableInverter);
    }

    let tw = TermWeights::from(cfg.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam: Adam<T> = Adam::new(
        inv.params().len(),
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    // Fixed source batch for held-out evaluation.
    let eval_sources = sample_batch(source_pool, cfg.source_batch_size, cfg.seed ^ 0x5eed, "eval")?;

    let mut steps = Vec::with_capacity(cfg.iterations);
    let mut eval_points = Vec::new();
    for step in 0..cfg.iterations {
        let t_idx = rand::Rng::gen_range(&mut rng, 0..train_targets.len());
        let target = &train_targets[t_idx];
        let idx = rand::seq::index::sample(&mut rng, source_pool.len(), cfg.source_batch_size);
        let sources = SourceBatch::new(
            idx.iter().map(|i| source_pool[i].clone()).collect(),
            format!("train-step-{step}"),
        )?;

        let b = inv.invert(target)?;
        let ctx = ObjectiveContext::new(target, sources, g, c)?;
        let (breakdown, grad_b) = evaluate_objective(b.data(), &ctx, g, c, &tw, true)?;
        if !breakdown.total.is_finite() {
            return Err(EssenceError::NonFinite("finetune total loss".into()));
        }
        let grad_params = inv.invert_vjp(target, &grad_b.expect("gradient requested"))?;
        adam.step(inv.params_mut(), &grad_params);
        steps.push(breakdown);

        if !eval_targets.is_empty() && cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let score =
                mean_objective_over_targets(&inv, eval_targets, &eval_sources, g, c, &cfg.weights)?;
            eval_points.push((step + 1, score));
        }
    }

    let enc = EssenceEncoder::new(inv, cfg.digest());
    Ok((enc, EncoderTrainTrace { steps, eval_points }))
}

fn sample_batch<T: Scalar>(
    pool: &[crate::core::LatentCode<T>],
    n: usize,
    seed: u64,
    id: &str,
) -> Result<SourceBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, pool.len(), n);
    SourceBatch::new(idx.iter().map(|i| pool[i].clone()).collect(), id)
}
