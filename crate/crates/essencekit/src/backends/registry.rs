//! Backend profile registry.
//!
//! A profile names a complete model stack: either a seeded toy backend or an
//! adapter spec pointing at pretrained checkpoints. Adapter profiles are a
//! conformance contract (paths + digests + preprocessing); actually loading
//! them is the job of an adapter implementation outside this crate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::toy::{ToyConfig, ToyLinearBackend};
use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToyEncoderKind {
    #[default]
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Toy {
        seed: u64,
        #[serde(default = "default_layers")]
        layers: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_image_side")]
        height: usize,
        #[serde(default = "default_image_side")]
        width: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_embed_dim")]
        embed_dim: usize,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
        #[serde(default)]
        encoder: ToyEncoderKind,
        /// Pixel interval PNG I/O maps onto 8-bit, `[min, max]`.
        #[serde(default = "default_io_range")]
        io_range: (f64, f64),
    },
    Adapter {
        /// Checkpoint name -> {path, sha256, preprocessing}.
        checkpoints: BTreeMap<String, CheckpointSpec>,
        /// e.g. the CLIP visual backbone identifier, recorded for
        /// provenance rather than assumed.
        #[serde(default)]
        backbone: Option<String>,
    },
}

fn default_layers() -> usize {
    3
}
fn default_dim() -> usize {
    8
}
fn default_image_side() -> usize {
    8
}
fn default_channels() -> usize {
    1
}
fn default_embed_dim() -> usize {
    16
}
fn default_feature_dim() -> usize {
    8
}
fn default_io_range() -> (f64, f64) {
    (-32.0, 32.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub path: String,
    pub sha256: String,
    #[serde(default)]
    pub preprocessing: Option<String>,
}

impl ProfileSpec {
    pub fn toy_default(seed: u64) -> Self {
        let cfg = ToyConfig {
            seed,
            ..ToyConfig::default()
        };
        ProfileSpec::Toy {
            seed,
            layers: cfg.layers,
            dim: cfg.dim,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            embed_dim: cfg.embed_dim,
            feature_dim: cfg.feature_dim,
            encoder: ToyEncoderKind::Linear,
            io_range: default_io_range(),
        }
    }

    pub fn toy_config(&self) -> Result<(ToyConfig, ToyEncoderKind)> {
        match self {
            ProfileSpec::Toy {
                seed,
                layers,
                dim,
                height,
                width,
                channels,
                embed_dim,
                feature_dim,
                encoder,
                ..
            } => Ok((
                ToyConfig {
                    layers: *layers,
                    dim: *dim,
                    height: *height,
                    width: *width,
                    channels: *channels,
                    embed_dim: *embed_dim,
                    feature_dim: *feature_dim,
                    seed: *seed,
                },
                *encoder,
            )),
            ProfileSpec::Adapter { .. } => Err(EssenceError::InvalidConfig(
                "adapter profiles require an external adapter implementation; \
                 only toy profiles can be instantiated in-process"
                    .into(),
            )),
        }
    }

    pub fn instantiate<T: Scalar>(&self) -> Result<ToyLinearBackend<T>> {
        let (cfg, _) = self.toy_config()?;
        Ok(ToyLinearBackend::new(cfg))
    }

    pub fn io_range(&self) -> (f64, f64) {
        match self {
            ProfileSpec::Toy { io_range, .. } => *io_range,
            ProfileSpec::Adapter { .. } => (0.0, 1.0),
        }
    }

    /// Stable digest of the canonical JSON form, recorded in manifests and
    /// checked when reloading checkpoints.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("profile serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    pub profiles: BTreeMap<String, ProfileSpec>,
}

impl Registry {
    /// The built-in profiles available without any config file.
    pub fn builtin() -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert("toy".to_string(), ProfileSpec::toy_default(7));
        let mut tanh = ProfileSpec::toy_default(7);
        if let ProfileSpec::Toy { encoder, .. } = &mut tanh {
            *encoder = ToyEncoderKind::Tanh;
        }
        profiles.insert("toy-tanh".to_string(), tanh);
        Registry { profiles }
    }

    /// Loads `*.json` profile files from a directory, one profile per file,
    /// named by file stem. Built-ins are included unless shadowed.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut reg = Self::builtin();
        if dir.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
                .collect();
            entries.sort();
            for path in entries {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| {
                        EssenceError::InvalidConfig(format!("bad profile filename: {path:?}"))
                    })?
                    .to_string();
                let spec: ProfileSpec = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                reg.profiles.insert(name, spec);
            }
        }
        Ok(reg)
    }

    pub fn get(&self, name: &str) -> Result<&ProfileSpec> {
        self.profiles.get(name).ok_or_else(|| {
            EssenceError::InvalidConfig(format!(
                "unknown profile '{name}' (known: {})",
                self.profiles.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_toy_instantiates() {
        let reg = Registry::builtin();
        let spec = reg.get("toy").unwrap();
        let be = spec.instantiate::<f64>().unwrap();
        assert_eq!(be.config().seed, 7);
    }

    #[test]
    fn adapter_profile_refuses_instantiation() {
        let spec = ProfileSpec::Adapter {
            checkpoints: BTreeMap::new(),
            backbone: Some("ViT-B/32".into()),
        };
        assert!(spec.instantiate::<f64>().is_err());
    }

    #[test]
    fn digest_is_stable_and_distinguishes() {
        let a = ProfileSpec::toy_default(7);
        let b = ProfileSpec::toy_default(8);
        assert_eq!(a.digest(), ProfileSpec::toy_default(7).digest());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn profile_roundtrip_json() {
        let spec = ProfileSpec::toy_default(42);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProfileSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
