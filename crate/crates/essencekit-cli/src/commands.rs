//! Subcommand implementations. Each returns `Result<()>`; `main` maps the
//! error category onto the process exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use essencekit::backends::registry::{ProfileSpec, ToyEncoderKind};
use essencekit::backends::toy::ToyLinearBackend;
use essencekit::backends::{FeatureExtractor, Generator};
use essencekit::encoder_trainer::{finetune_essence_encoder, EncoderTrainConfig, EssenceEncoder};
use essencekit::evaluation::{
    aggregate, fid, fids_to_csv, id_scores, records_to_csv, sensitivity_run, AblationVariant,
    HarnessFixture, MetricRecord,
};
use essencekit::optimizer::{apply_essence, optimize_essence, InitMode, OptimizerConfig};
use essencekit::{essv, EssenceError, ImageTensor64, LatentCode64, Result, SourceBatch64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::checkpoint::{read_checkpoint, write_checkpoint, CheckpointSidecar};
use crate::grid::{compose_grid, save_grid, tensor_to_rgb};
use crate::util::{
    instantiate, load_sources, load_targets, prepare_out_dir, read_png, resolve_registry,
    semantic_encoder, stem, write_json, write_png, RunManifest,
};

#[derive(Args, Debug)]
pub struct ProfileFlags {
    /// Backend profile name (built-ins: toy, toy-tanh).
    #[arg(long, default_value = "toy")]
    pub profile: String,
    /// Extra profile directory; overrides ESSENCEKIT_PROFILE_DIR.
    #[arg(long)]
    pub profile_dir: Option<PathBuf>,
}

impl ProfileFlags {
    pub fn resolve(&self) -> Result<(ProfileSpec, ToyLinearBackend<f64>, ToyEncoderKind)> {
        let reg = resolve_registry(self.profile_dir.as_deref())?;
        let spec = reg.get(&self.profile)?.clone();
        let (be, kind) = instantiate(&spec)?;
        Ok((spec, be, kind))
    }
}

#[derive(Args, Debug)]
pub struct OptimizerFlags {
    /// Optimization iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Source batch size N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Consistency weight lambda_c.
    #[arg(long = "lambda-c")]
    pub lambda_c: Option<f64>,
    /// L2 weight lambda_l2.
    #[arg(long = "lambda-l2")]
    pub lambda_l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; flags override its values, it overrides defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn deep_merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl OptimizerFlags {
    pub fn build(&self) -> Result<OptimizerConfig> {
        let mut value = serde_json::to_value(OptimizerConfig::default())?;
        if let Some(path) = &self.config {
            let overlay: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if !overlay.is_object() {
                return Err(EssenceError::InvalidConfig(format!(
                    "config file {} must hold a JSON object",
                    path.display()
                )));
            }
            deep_merge(&mut value, &overlay);
        }
        let mut cfg: OptimizerConfig = serde_json::from_value(value)?;
        if let Some(v) = self.iters {
            cfg.iterations = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.n {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lambda_c {
            cfg.weights.lambda_consistency = v;
        }
        if let Some(v) = self.lambda_l2 {
            cfg.weights.lambda_l2 = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum InitArg {
    Noise,
    Inversion,
}

impl From<InitArg> for InitMode {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Noise => InitMode::Noise,
            InitArg::Inversion => InitMode::TargetInversion,
        }
    }
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Target image (PNG).
    #[arg(long)]
    pub target: PathBuf,
    /// Directory of source latents (.essv) and/or images (.png).
    #[arg(long)]
    pub sources: PathBuf,
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[command(flatten)]
    pub optimizer: OptimizerFlags,
    /// Shift initialization.
    #[arg(long, value_enum, default_value = "noise")]
    pub init: InitArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also render a grid image (target / sources / results rows).
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_transfer(args: &TransferArgs) -> Result<()> {
    let (spec, be, enc_kind) = args.profile.resolve()?;
    let mut cfg = args.optimizer.build()?;
    cfg.init_mode = args.init.into();
    cfg.validate()?;
    let range = spec.io_range();
    let g = &be.generator;
    let c = semantic_encoder(&be, enc_kind);

    let target_id = stem(&args.target)?;
    let target = read_png(&args.target, g.image_shape(), range)?;
    let sources = load_sources(&args.sources, &be, range)?;
    if sources.len() < cfg.batch_size {
        return Err(EssenceError::BatchTooSmall {
            context: "transfer: source pool".into(),
            required: cfg.batch_size,
            got: sources.len(),
        });
    }
    let train = SourceBatch64::new(
        sources[..cfg.batch_size]
            .iter()
            .map(|(_, z)| z.clone())
            .collect(),
        format!("transfer-{target_id}"),
    )?;

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "transfer",
        &args.profile.profile,
        &spec,
        cfg.seed,
        serde_json::to_value(&cfg)?,
    )
    .input("target", &args.target)
    .input("sources", &args.sources)
    .output("essence.essv")
    .output("trace.json")
    .output("manipulations/")
    .write(&args.out)?;

    let (b, trace) = optimize_essence(&target, &train, g, c, Some(&be.inverter), &cfg)?;
    essv::write_essence(
        &args.out.join("essence.essv"),
        &b,
        serde_json::to_value(&cfg)?,
    )?;
    write_json(&args.out.join("trace.json"), &trace)?;

    let mut results = Vec::new();
    for (sid, z) in &sources {
        let manipulated = apply_essence(z, &b, g)?;
        write_png(
            &args.out.join(format!("manipulations/{target_id}__{sid}.png")),
            &manipulated,
            range,
        )?;
        results.push(manipulated);
    }
    if args.grid {
        let rows = vec![
            vec![tensor_to_rgb(&target, range)],
            sources
                .iter()
                .map(|(_, z)| Ok(tensor_to_rgb(&g.decode(z)?, range)))
                .collect::<Result<Vec<_>>>()?,
            results.iter().map(|r| tensor_to_rgb(r, range)).collect(),
        ];
        save_grid(&args.out.join("grid.png"), &compose_grid(&rows, 8)?)?;
    }
    println!(
        "transfer: wrote essence (|b| = {:.6}) and {} manipulations to {}",
        b.l2_norm(),
        sources.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Trained encoder checkpoint (TENC1).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target image (PNG).
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let (spec, be, _) = args.profile.resolve()?;
    let (params, rows, cols, sidecar) = read_checkpoint(&args.checkpoint)?;
    if sidecar.profile_digest != spec.digest() {
        return Err(EssenceError::EncoderMismatch {
            expected: spec.digest(),
            got: sidecar.profile_digest,
        });
    }
    let cfg = be.config();
    if (rows, cols) != (cfg.latent_len(), cfg.pixel_len()) {
        return Err(EssenceError::ShapeMismatch {
            context: "extract: checkpoint".into(),
            expected: vec![cfg.latent_len(), cfg.pixel_len()],
            got: vec![rows, cols],
        });
    }
    let inverter = be.trainable_inverter_from_params(params)?;
    let encoder = EssenceEncoder::new(inverter, sidecar.config_digest.clone());

    let range = spec.io_range();
    let target = read_png(&args.target, be.generator.image_shape(), range)?;

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "extract",
        &args.profile.profile,
        &spec,
        0,
        serde_json::json!({ "checkpoint": args.checkpoint.display().to_string() }),
    )
    .input("target", &args.target)
    .input("checkpoint", &args.checkpoint)
    .output("essence.essv")
    .write(&args.out)?;

    let b = encoder.extract(&target)?;
    essv::write_essence(&args.out.join("essence.essv"), &b, sidecar.train_config)?;
    println!(
        "extract: wrote essence (|b| = {:.6}) to {}",
        b.l2_norm(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainEncoderArgs {
    #[command(flatten)]
    pub profile: ProfileFlags,
    /// Directory of training target images (PNG).
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Directory of held-out evaluation targets (PNG).
    #[arg(long)]
    pub eval_dir: PathBuf,
    /// Directory of source latents; omitted -> a seeded random pool.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Size of the synthesized source pool when --sources is absent.
    #[arg(long, default_value_t = 32)]
    pub pool_size: usize,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Output directory (encoder.ckpt + trace).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn random_pool(be: &ToyLinearBackend<f64>, n: usize, seed: u64) -> Result<Vec<LatentCode64>> {
    let cfg = be.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            LatentCode64::new(
                (0..cfg.latent_len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
                cfg.layers,
                cfg.dim,
                be.space_id(),
            )
        })
        .collect()
}

pub fn cmd_train_encoder(args: &TrainEncoderArgs) -> Result<()> {
    let (spec, be, enc_kind) = args.profile.resolve()?;
    let mut cfg = EncoderTrainConfig::default();
    if let Some(v) = args.iters {
        cfg.iterations = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.n {
        cfg.source_batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    cfg.validate()?;

    let range = spec.io_range();
    let shape = be.generator.image_shape();
    let train: Vec<ImageTensor64> = load_targets(&args.train_dir, shape, range)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let eval: Vec<ImageTensor64> = load_targets(&args.eval_dir, shape, range)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let pool = match &args.sources {
        Some(dir) => load_sources(dir, &be, range)?
            .into_iter()
            .map(|(_, z)| z)
            .collect(),
        None => random_pool(&be, args.pool_size, cfg.seed ^ 0xb00)?,
    };

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "train-encoder",
        &args.profile.profile,
        &spec,
        cfg.seed,
        serde_json::to_value(&cfg)?,
    )
    .input("train_dir", &args.train_dir)
    .input("eval_dir", &args.eval_dir)
    .output("encoder.ckpt")
    .output("train_trace.json")
    .write(&args.out)?;

    let c = semantic_encoder(&be, enc_kind);
    let (encoder, trace) = finetune_essence_encoder(
        be.trainable_inverter(),
        &train,
        &eval,
        &pool,
        &be.generator,
        c,
        &cfg,
    )?;
    let params: Vec<f64> = encoder.inverter().clone_params();
    let toy_cfg = be.config();
    write_checkpoint(
        &args.out.join("encoder.ckpt"),
        &params,
        toy_cfg.latent_len(),
        toy_cfg.pixel_len(),
        &CheckpointSidecar {
            profile: args.profile.profile.clone(),
            profile_digest: spec.digest(),
            space_id: be.space_id(),
            config_digest: cfg.digest(),
            train_config: serde_json::to_value(&cfg)?,
        },
    )?;
    write_json(&args.out.join("train_trace.json"), &trace)?;
    println!(
        "train-encoder: {} steps, wrote encoder.ckpt to {}",
        trace.steps.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of target images (PNG).
    #[arg(long)]
    pub targets: PathBuf,
    /// Directory of sources (.essv latents and/or .png images).
    #[arg(long)]
    pub sources: PathBuf,
    /// Directory of manipulations named {target}__{source}.png.
    #[arg(long)]
    pub manipulations: PathBuf,
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Scale cosine columns by 100 in the CSV.
    #[arg(long)]
    pub scale_100: bool,
    /// Parallel pair evaluation bound; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
}

/// Source images for evaluation: PNGs read directly, latents decoded.
fn load_source_images(
    dir: &Path,
    be: &ToyLinearBackend<f64>,
    range: (f64, f64),
) -> Result<Vec<(String, ImageTensor64)>> {
    let latents = load_sources(dir, be, range)?;
    let shape = be.generator.image_shape();
    latents
        .into_iter()
        .map(|(sid, z)| {
            let png = dir.join(format!("{sid}.png"));
            let img = if png.exists() {
                read_png(&png, shape, range)?
            } else {
                be.generator.decode(&z)?
            };
            Ok((sid, img))
        })
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (spec, be, enc_kind) = args.profile.resolve()?;
    let range = spec.io_range();
    let shape = be.generator.image_shape();
    let targets = load_targets(&args.targets, shape, range)?;
    let sources = load_source_images(&args.sources, &be, range)?;

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "evaluate",
        &args.profile.profile,
        &spec,
        0,
        serde_json::json!({ "scale_100": args.scale_100 }),
    )
    .input("targets", &args.targets)
    .input("sources", &args.sources)
    .input("manipulations", &args.manipulations)
    .output("report.json")
    .output("records.csv")
    .output("fid.csv")
    .write(&args.out)?;

    let expected: Vec<(String, String)> = targets
        .iter()
        .flat_map(|(t, _)| sources.iter().map(move |(s, _)| (t.clone(), s.clone())))
        .collect();
    let c = semantic_encoder(&be, enc_kind);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| EssenceError::InvalidConfig(format!("--jobs: {e}")))?;
    let pairs: Vec<(&(String, ImageTensor64), &(String, ImageTensor64))> = targets
        .iter()
        .flat_map(|t| sources.iter().map(move |s| (t, s)))
        .collect();
    let results: Vec<Result<(MetricRecord, Vec<f64>)>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|((tid, t_img), (sid, s_img))| {
                let path = args.manipulations.join(format!("{tid}__{sid}.png"));
                if !path.exists() {
                    return Err(EssenceError::MissingPair {
                        target_id: tid.clone(),
                        source_id: sid.clone(),
                    });
                }
                let i_st = read_png(&path, shape, range)?;
                let (id_source, id_target) = id_scores(s_img, t_img, &i_st, &be.face_embedder)?;
                let sem_clip = essencekit::evaluation::semantic_score(t_img, &i_st, c)?;
                let features = be
                    .feature_extractor
                    .features(&i_st)?;
                Ok((
                    MetricRecord {
                        target_id: tid.clone(),
                        source_id: sid.clone(),
                        id_source,
                        id_target,
                        sem_clip,
                        sem_blip: None,
                    },
                    features,
                ))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut manip_features: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in results {
        let (record, features) = r?;
        manip_features
            .entry(record.target_id.clone())
            .or_default()
            .push(features);
        records.push(record);
    }

    // Per-target FID of manipulation features against the source images;
    // needs at least two samples on each side to fit Gaussians.
    let mut fids = BTreeMap::new();
    if sources.len() >= 2 {
        let reference: Vec<Vec<f64>> = sources
            .iter()
            .map(|(_, img)| be.feature_extractor.features(img))
            .collect::<Result<_>>()?;
        for (tid, features) in &manip_features {
            if features.len() >= 2 {
                fids.insert(tid.clone(), fid(features, &reference)?);
            }
        }
    }

    let report = aggregate(&records, &fids, Some(&expected), &spec.digest())?;
    write_json(&args.out.join("report.json"), &report)?;
    essv::atomic_write(
        &args.out.join("records.csv"),
        records_to_csv(&records, args.scale_100).as_bytes(),
    )?;
    essv::atomic_write(&args.out.join("fid.csv"), fids_to_csv(&fids).as_bytes())?;
    println!(
        "evaluate: {} pairs, sem mean {:.4} +/- {:.4}; report in {}",
        records.len(),
        report.sem_clip.mean,
        report.sem_clip.std,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Directory of target images (PNG).
    #[arg(long)]
    pub targets: PathBuf,
    /// Directory of the source latent pool (.essv / .png).
    #[arg(long)]
    pub sources: PathBuf,
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[command(flatten)]
    pub optimizer: OptimizerFlags,
    /// Comma-separated subset of full,no_consistency,no_similarity,no_l2.
    #[arg(long, default_value = "full,no_consistency,no_similarity,no_l2")]
    pub variants: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_variants(spec: &str) -> Result<Vec<AblationVariant>> {
    spec.split(',')
        .map(|s| match s.trim() {
            "full" => Ok(AblationVariant::Full),
            "no_consistency" => Ok(AblationVariant::NoConsistency),
            "no_similarity" => Ok(AblationVariant::NoSimilarity),
            "no_l2" => Ok(AblationVariant::NoL2),
            other => Err(EssenceError::InvalidConfig(format!(
                "unknown ablation variant '{other}'"
            ))),
        })
        .collect()
}

/// Splits a loaded pool into the fixed training batch (first `n`) and the
/// held-out remainder.
fn split_pool(
    pool: Vec<(String, LatentCode64)>,
    n: usize,
    batch_id: &str,
) -> Result<(SourceBatch64, Vec<(String, LatentCode64)>)> {
    if pool.len() <= n {
        return Err(EssenceError::BatchTooSmall {
            context: "source pool must exceed the training batch for held-out evaluation".into(),
            required: n + 1,
            got: pool.len(),
        });
    }
    let holdout = pool[n..].to_vec();
    let train = SourceBatch64::new(pool[..n].iter().map(|(_, z)| z.clone()).collect(), batch_id)?;
    Ok((train, holdout))
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let (spec, be, enc_kind) = args.profile.resolve()?;
    let cfg = args.optimizer.build()?;
    cfg.validate()?;
    let variants = parse_variants(&args.variants)?;
    let range = spec.io_range();
    let targets = load_targets(&args.targets, be.generator.image_shape(), range)?;
    let pool = load_sources(&args.sources, &be, range)?;
    let fid_reference: Vec<ImageTensor64> = pool
        .iter()
        .map(|(_, z)| be.generator.decode(z))
        .collect::<Result<_>>()?;
    let (train, holdout) = split_pool(pool, cfg.batch_size, "ablate-train")?;

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "ablate",
        &args.profile.profile,
        &spec,
        cfg.seed,
        serde_json::to_value(&cfg)?,
    )
    .input("targets", &args.targets)
    .input("sources", &args.sources)
    .output("summary.json")
    .write(&args.out)?;

    let fixture = HarnessFixture {
        targets,
        train_sources: train,
        holdout_sources: holdout,
        generator: &be.generator,
        semantic_encoder: semantic_encoder(&be, enc_kind),
        face_embedder: &be.face_embedder,
        feature_extractor: Some(&be.feature_extractor),
        fid_reference,
        inverter: Some(&be.inverter),
        optimizer_cfg: cfg,
    };
    let mut summary = BTreeMap::new();
    for variant in variants {
        let outcome = essencekit::evaluation::ablation_run(variant, &fixture)?;
        write_json(
            &args.out.join(format!("{}.json", outcome.variant)),
            &outcome,
        )?;
        let mean_norm = outcome.essence_norms.values().sum::<f64>()
            / outcome.essence_norms.len().max(1) as f64;
        let mean_cons = outcome.holdout_consistency.values().sum::<f64>()
            / outcome.holdout_consistency.len().max(1) as f64;
        summary.insert(
            outcome.variant.clone(),
            serde_json::json!({
                "sem_clip": outcome.report.sem_clip,
                "id_source": outcome.report.id_source,
                "id_target": outcome.report.id_target,
                "mean_essence_norm": mean_norm,
                "mean_holdout_consistency": mean_cons,
            }),
        );
        println!("ablate[{}]: done", outcome.variant);
    }
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("ablate: summary in {}", args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    /// Directory of target images (PNG).
    #[arg(long)]
    pub targets: PathBuf,
    /// Directory of the source latent pool (.essv / .png).
    #[arg(long)]
    pub sources: PathBuf,
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[command(flatten)]
    pub optimizer: OptimizerFlags,
    /// Comma-separated batch sizes, e.g. 2,4,8.
    #[arg(long, default_value = "2,4,8")]
    pub n_values: String,
    /// How many pool entries are held out for evaluation.
    #[arg(long, default_value_t = 2)]
    pub holdout: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> Result<()> {
    let (spec, be, enc_kind) = args.profile.resolve()?;
    let cfg = args.optimizer.build()?;
    let n_values: Vec<usize> = args
        .n_values
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| EssenceError::InvalidConfig(format!("--n-values: {e}")))
        })
        .collect::<Result<_>>()?;
    let range = spec.io_range();
    let targets = load_targets(&args.targets, be.generator.image_shape(), range)?;
    let pool = load_sources(&args.sources, &be, range)?;
    if pool.len() <= args.holdout {
        return Err(EssenceError::BatchTooSmall {
            context: "sensitivity: pool vs --holdout".into(),
            required: args.holdout + 1,
            got: pool.len(),
        });
    }
    let split = pool.len() - args.holdout;
    let fid_reference: Vec<ImageTensor64> = pool
        .iter()
        .map(|(_, z)| be.generator.decode(z))
        .collect::<Result<_>>()?;
    let holdout = pool[split..].to_vec();
    let train = SourceBatch64::new(
        pool[..split].iter().map(|(_, z)| z.clone()).collect(),
        "sensitivity-train",
    )?;

    prepare_out_dir(&args.out, args.force)?;
    RunManifest::new(
        "sensitivity",
        &args.profile.profile,
        &spec,
        cfg.seed,
        serde_json::json!({
            "optimizer": serde_json::to_value(&cfg)?,
            "n_values": n_values,
        }),
    )
    .input("targets", &args.targets)
    .input("sources", &args.sources)
    .output("summary.csv")
    .write(&args.out)?;

    let fixture = HarnessFixture {
        targets,
        train_sources: train,
        holdout_sources: holdout,
        generator: &be.generator,
        semantic_encoder: semantic_encoder(&be, enc_kind),
        face_embedder: &be.face_embedder,
        feature_extractor: Some(&be.feature_extractor),
        fid_reference,
        inverter: Some(&be.inverter),
        optimizer_cfg: cfg,
    };
    let reports = sensitivity_run(&n_values, &fixture)?;
    let mut csv = String::from(
        "n,id_source_mean,id_source_std,id_target_mean,id_target_std,sem_clip_mean,sem_clip_std\n",
    );
    for (n, report) in &reports {
        write_json(&args.out.join(format!("report_n{n}.json")), report)?;
        csv.push_str(&format!(
            "{n},{},{},{},{},{},{}\n",
            report.id_source.mean,
            report.id_source.std,
            report.id_target.mean,
            report.id_target.std,
            report.sem_clip.mean,
            report.sem_clip.std
        ));
    }
    essv::atomic_write(&args.out.join("summary.csv"), csv.as_bytes())?;
    println!(
        "sensitivity: {} batch sizes evaluated, summary in {}",
        reports.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Target image (PNG).
    #[arg(long)]
    pub target: PathBuf,
    /// Directory of source images (PNG).
    #[arg(long)]
    pub sources: PathBuf,
    /// Directory of result images (PNG).
    #[arg(long)]
    pub results: PathBuf,
    /// Output grid image path.
    #[arg(long)]
    pub out: PathBuf,
    /// Nearest-neighbor upscale factor per cell.
    #[arg(long, default_value_t = 8)]
    pub scale: u32,
}

fn read_rgb_dir(dir: &Path) -> Result<Vec<image::RgbImage>> {
    if !dir.is_dir() {
        return Err(EssenceError::InvalidConfig(format!(
            "not a directory: {}",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            Ok(image::open(p)
                .map_err(|e| EssenceError::InvalidImage(e.to_string()))?
                .to_rgb8())
        })
        .collect()
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    let target = image::open(&args.target)
        .map_err(|e| EssenceError::InvalidImage(e.to_string()))?
        .to_rgb8();
    let rows = vec![
        vec![target],
        read_rgb_dir(&args.sources)?,
        read_rgb_dir(&args.results)?,
    ];
    save_grid(&args.out, &compose_grid(&rows, args.scale)?)?;
    println!("grid: wrote {}", args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProfilesArgs {
    #[arg(long)]
    pub profile_dir: Option<PathBuf>,
}

pub fn cmd_profiles(args: &ProfilesArgs) -> Result<()> {
    let reg = resolve_registry(args.profile_dir.as_deref())?;
    for (name, spec) in &reg.profiles {
        let kind = match spec {
            ProfileSpec::Toy { .. } => "toy",
            ProfileSpec::Adapter { .. } => "adapter",
        };
        println!("{name}\t{kind}\t{}", spec.digest());
    }
    Ok(())
}
