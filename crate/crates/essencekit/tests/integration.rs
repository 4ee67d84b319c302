//! Cross-module integration checks that don't belong to a single unit:
//! optimizer-vs-encoder accuracy trade-off, sensitivity harness edges, and
//! the f32 instantiation path.

use essencekit::backends::toy::{ToyConfig, ToyLinearBackend};
use essencekit::backends::Generator;
use essencekit::core::{ImageTensor, LatentCode, SourceBatch};
use essencekit::encoder_trainer::{finetune_essence_encoder, EncoderTrainConfig};
use essencekit::error::EssenceError;
use essencekit::evaluation::{ablation_run, sensitivity_run, AblationVariant, HarnessFixture};
use essencekit::losses::{evaluate_objective, LossWeights, ObjectiveContext, TermWeights};
use essencekit::optimizer::{optimize_essence, OptimizerConfig};
use essencekit::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn latent<T: Scalar>(be: &ToyLinearBackend<T>, rng: &mut ChaCha8Rng) -> LatentCode<T> {
    let cfg = be.config();
    LatentCode::new(
        (0..cfg.latent_len())
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(v)
            })
            .collect(),
        cfg.layers,
        cfg.dim,
        be.space_id(),
    )
    .unwrap()
}

/// Per-target optimization reaches a similarity loss at least as low as a
/// fine-tuned encoder's single forward pass on most targets — the paper's
/// accuracy-runtime trade-off, at toy scale.
#[test]
fn optimizer_beats_or_matches_encoder_on_most_targets() {
    let be: ToyLinearBackend<f64> = ToyLinearBackend::new(ToyConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let train: Vec<ImageTensor<f64>> = (0..32)
        .map(|_| be.generator.decode(&latent(&be, &mut rng)).unwrap())
        .collect();
    let pool: Vec<LatentCode<f64>> = (0..16).map(|_| latent(&be, &mut rng)).collect();
    let enc_cfg = EncoderTrainConfig {
        iterations: 1500,
        learning_rate: 1e-3,
        seed: 31,
        ..EncoderTrainConfig::default()
    };
    let (encoder, _) = finetune_essence_encoder(
        be.trainable_inverter(),
        &train,
        &[],
        &pool,
        &be.generator,
        &be.encoder,
        &enc_cfg,
    )
    .unwrap();

    let opt_cfg = OptimizerConfig {
        seed: 77,
        ..OptimizerConfig::default()
    };
    let sources = SourceBatch::new(pool[..4].to_vec(), "tradeoff").unwrap();
    let tw = TermWeights::from(LossWeights::default());
    let mut optimizer_wins = 0;
    let total = 5;
    for _ in 0..total {
        let target = be.generator.decode(&latent(&be, &mut rng)).unwrap();
        let (_, trace) = optimize_essence(
            &target,
            &sources,
            &be.generator,
            &be.encoder,
            None,
            &opt_cfg,
        )
        .unwrap();
        let opt_sim = trace.iterations.last().unwrap().similarity;

        let b_enc = encoder.extract(&target).unwrap();
        let ctx = ObjectiveContext::new(&target, sources.clone(), &be.generator, &be.encoder)
            .unwrap();
        let (enc_breakdown, _) =
            evaluate_objective(b_enc.data(), &ctx, &be.generator, &be.encoder, &tw, false)
                .unwrap();
        if opt_sim <= enc_breakdown.similarity {
            optimizer_wins += 1;
        }
    }
    assert!(
        optimizer_wins * 5 >= total * 4,
        "optimizer matched/beat the encoder on only {optimizer_wins}/{total} targets"
    );
}

fn fixture<'a>(
    be: &'a ToyLinearBackend<f64>,
    targets: Vec<(String, ImageTensor<f64>)>,
    train: SourceBatch<f64>,
    holdout: Vec<(String, LatentCode<f64>)>,
) -> HarnessFixture<'a, f64> {
    HarnessFixture {
        targets,
        train_sources: train,
        holdout_sources: holdout,
        generator: &be.generator,
        semantic_encoder: &be.encoder,
        face_embedder: &be.face_embedder,
        feature_extractor: None,
        fid_reference: Vec::new(),
        inverter: None,
        optimizer_cfg: OptimizerConfig {
            iterations: 100,
            seed: 5,
            ..OptimizerConfig::default()
        },
    }
}

#[test]
fn sensitivity_rejects_batch_of_one() {
    let be: ToyLinearBackend<f64> = ToyLinearBackend::new(ToyConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let targets = vec![(
        "t0".to_string(),
        be.generator.decode(&latent(&be, &mut rng)).unwrap(),
    )];
    let train = SourceBatch::new((0..4).map(|_| latent(&be, &mut rng)).collect(), "tr").unwrap();
    let holdout = vec![("h0".to_string(), latent(&be, &mut rng))];
    let f = fixture(&be, targets, train, holdout);
    assert!(matches!(
        sensitivity_run(&[1], &f).unwrap_err(),
        EssenceError::BatchTooSmall { .. }
    ));
}

/// At N equal to the full training batch, the sensitivity harness and the
/// full-loss ablation run describe the same optimization.
#[test]
fn sensitivity_at_full_batch_matches_full_ablation_metrics() {
    let be: ToyLinearBackend<f64> = ToyLinearBackend::new(ToyConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let targets: Vec<(String, ImageTensor<f64>)> = (0..2)
        .map(|i| {
            (
                format!("t{i}"),
                be.generator.decode(&latent(&be, &mut rng)).unwrap(),
            )
        })
        .collect();
    let train = SourceBatch::new((0..4).map(|_| latent(&be, &mut rng)).collect(), "tr").unwrap();
    let holdout: Vec<(String, LatentCode<f64>)> =
        (0..3).map(|i| (format!("h{i}"), latent(&be, &mut rng))).collect();
    let f = fixture(&be, targets, train, holdout);
    let reports = sensitivity_run(&[4], &f).unwrap();
    let ablation = ablation_run(AblationVariant::Full, &f).unwrap();
    let sens = &reports[&4];
    assert_eq!(sens.per_target, ablation.report.per_target);
    assert_eq!(sens.sem_clip, ablation.report.sem_clip);
    assert_eq!(sens.id_source, ablation.report.id_source);
    assert_eq!(sens.id_target, ablation.report.id_target);
}

/// The whole training path is generic over the scalar: single-precision
/// optimization runs and produces finite, effective shifts.
#[test]
fn f32_path_optimizes() {
    let be: ToyLinearBackend<f32> = ToyLinearBackend::new(ToyConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let target = be.generator.decode(&latent(&be, &mut rng)).unwrap();
    let sources = SourceBatch::new((0..4).map(|_| latent(&be, &mut rng)).collect(), "f32").unwrap();
    let cfg = OptimizerConfig {
        iterations: 200,
        seed: 6,
        ..OptimizerConfig::default()
    };
    let (b, trace) = optimize_essence(
        &target,
        &sources,
        &be.generator,
        &be.encoder,
        None,
        &cfg,
    )
    .unwrap();
    assert!(b.data().iter().all(|v| v.is_finite()));
    let first = trace.iterations.first().unwrap().similarity;
    let last = trace.iterations.last().unwrap().similarity;
    assert!(
        last < 0.5 * first,
        "f32 similarity did not improve: {first} -> {last}"
    );
}
