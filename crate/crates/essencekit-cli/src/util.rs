//! Shared plumbing: profile resolution, PNG <-> tensor conversion under a
//! declared value range, source loading, run manifests and the --out
//! collision policy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use essencekit::backends::registry::{ProfileSpec, Registry, ToyEncoderKind};
use essencekit::backends::toy::ToyLinearBackend;
use essencekit::backends::{Inverter, SemanticEncoder};
use essencekit::core::{ColorOrder, ValueRange};
use essencekit::essv::atomic_write;
use essencekit::{EssenceError, ImageTensor64, LatentCode64, Result};
use serde::Serialize;

pub const PROFILE_DIR_ENV: &str = "ESSENCEKIT_PROFILE_DIR";

/// Profiles from `--profile-dir`, the `ESSENCEKIT_PROFILE_DIR` env var, or
/// just the built-ins, in that precedence order.
pub fn resolve_registry(profile_dir: Option<&Path>) -> Result<Registry> {
    let dir = profile_dir
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(PROFILE_DIR_ENV).map(PathBuf::from));
    match dir {
        Some(d) => Registry::load_dir(&d),
        None => Ok(Registry::builtin()),
    }
}

/// The semantic encoder a toy profile selects.
pub fn semantic_encoder<'a>(
    be: &'a ToyLinearBackend<f64>,
    kind: ToyEncoderKind,
) -> &'a dyn SemanticEncoder<f64> {
    match kind {
        ToyEncoderKind::Linear => &be.encoder,
        ToyEncoderKind::Tanh => &be.tanh_encoder,
    }
}

pub fn instantiate(spec: &ProfileSpec) -> Result<(ToyLinearBackend<f64>, ToyEncoderKind)> {
    let (_, kind) = spec.toy_config()?;
    Ok((spec.instantiate::<f64>()?, kind))
}

fn image_err(e: image::ImageError) -> EssenceError {
    EssenceError::InvalidImage(e.to_string())
}

/// Reads an 8-bit PNG into the profile's value range, checking the shape
/// against the backend's image shape.
pub fn read_png(
    path: &Path,
    shape: (usize, usize, usize),
    range: (f64, f64),
) -> Result<ImageTensor64> {
    let (h, w, c) = shape;
    let (lo, hi) = range;
    let img = image::open(path).map_err(image_err)?;
    let raw: Vec<u8> = if c == 1 {
        let g = img.to_luma8();
        if (g.height() as usize, g.width() as usize) != (h, w) {
            return Err(EssenceError::ShapeMismatch {
                context: format!("read_png: {}", path.display()),
                expected: vec![h, w, c],
                got: vec![g.height() as usize, g.width() as usize, 1],
            });
        }
        g.into_raw()
    } else {
        let rgb = img.to_rgb8();
        if (rgb.height() as usize, rgb.width() as usize) != (h, w) {
            return Err(EssenceError::ShapeMismatch {
                context: format!("read_png: {}", path.display()),
                expected: vec![h, w, c],
                got: vec![rgb.height() as usize, rgb.width() as usize, 3],
            });
        }
        rgb.into_raw()
    };
    let data: Vec<f64> = raw
        .into_iter()
        .map(|v| lo + (v as f64 / 255.0) * (hi - lo))
        .collect();
    ImageTensor64::new(
        data,
        h,
        w,
        c,
        ValueRange { min: lo, max: hi },
        if c == 1 {
            ColorOrder::Grayscale
        } else {
            ColorOrder::Rgb
        },
    )
}

/// Writes a tensor as 8-bit PNG, clamping into the profile's value range.
pub fn write_png(path: &Path, img: &ImageTensor64, range: (f64, f64)) -> Result<()> {
    let (h, w, c) = img.shape();
    let (lo, hi) = range;
    let span = hi - lo;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    if c == 1 {
        image::GrayImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from shape")
            .save(path)
            .map_err(image_err)
    } else {
        image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from shape")
            .save(path)
            .map_err(image_err)
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(EssenceError::InvalidConfig(format!(
            "not a directory: {}",
            dir.display()
        )));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == ext).unwrap_or(false))
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| EssenceError::InvalidConfig(format!("bad filename: {}", path.display())))
}

/// Loads source latents from a directory: `.essv` files directly, `.png`
/// files through the profile's inverter. Sorted by file stem.
pub fn load_sources(
    dir: &Path,
    be: &ToyLinearBackend<f64>,
    range: (f64, f64),
) -> Result<Vec<(String, LatentCode64)>> {
    let mut out = Vec::new();
    for p in sorted_files(dir, "essv")? {
        out.push((stem(&p)?, essencekit::essv::read_latent(&p)?));
    }
    let shape = (be.config().height, be.config().width, be.config().channels);
    for p in sorted_files(dir, "png")? {
        let img = read_png(&p, shape, range)?;
        out.push((stem(&p)?, be.inverter.invert(&img)?));
    }
    if out.is_empty() {
        return Err(EssenceError::EmptyBatch(format!(
            "no .essv or .png sources in {}",
            dir.display()
        )));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Loads named target images (`.png`) from a directory, sorted by stem.
pub fn load_targets(
    dir: &Path,
    shape: (usize, usize, usize),
    range: (f64, f64),
) -> Result<Vec<(String, ImageTensor64)>> {
    let mut out = Vec::new();
    for p in sorted_files(dir, "png")? {
        out.push((stem(&p)?, read_png(&p, shape, range)?));
    }
    if out.is_empty() {
        return Err(EssenceError::EmptyBatch(format!(
            "no .png targets in {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub profile: String,
    pub profile_digest: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub created_unix_ms: u128,
}

impl RunManifest {
    pub fn new(
        command: &str,
        profile: &str,
        spec: &ProfileSpec,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        Self {
            command: command.to_string(),
            profile: profile.to_string(),
            profile_digest: spec.digest(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn input(mut self, key: &str, value: impl AsRef<Path>) -> Self {
        self.inputs
            .insert(key.to_string(), value.as_ref().display().to_string());
        self
    }

    pub fn output(mut self, value: &str) -> Self {
        self.outputs.push(value.to_string());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        atomic_write(
            &out_dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }
}

/// Refuses an output directory that already holds a manifest unless
/// `--force`; creates the directory either way.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.join("manifest.json").exists() && !force {
        return Err(EssenceError::InvalidConfig(format!(
            "output directory {} already contains a run (manifest.json); pass --force to overwrite",
            out.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())
}
