//! ESSV1 binary interchange for latent-shaped tensors.
//!
//! Layout: 5 magic bytes `ESSV1`, u32 little-endian layer count L, u32
//! little-endian dim D, then L*D float32 little-endian values. A sidecar
//! JSON file at `<path>.json` carries space_id, provenance and a config
//! snapshot. The same container stores plain latents (sidecar kind
//! `latent`) and learned essence vectors (kind `essence`).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::core::{EssenceVector, LatentCode, Provenance};
use crate::error::{EssenceError, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 5] = b"ESSV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EssvKind {
    Essence,
    Latent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EssvSidecar {
    pub kind: EssvKind,
    pub space_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes bytes to a temp file in the target directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("essv"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn encode<T: Scalar>(data: &[T], layers: usize, dim: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(5 + 8 + data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(layers as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for &v in data {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    bytes
}

fn decode(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        return Err(EssenceError::Format("missing ESSV1 magic".into()));
    }
    let layers = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = 13 + layers * dim * 4;
    if bytes.len() != expected {
        return Err(EssenceError::Format(format!(
            "payload length {} does not match header {}x{}",
            bytes.len() - 13,
            layers,
            dim
        )));
    }
    let data = bytes[13..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((data, layers, dim))
}

pub fn write_essence<T: Scalar>(
    path: &Path,
    essence: &EssenceVector<T>,
    config_snapshot: serde_json::Value,
) -> Result<()> {
    let (l, d) = essence.shape();
    atomic_write(path, &encode(essence.data(), l, d))?;
    let sidecar = EssvSidecar {
        kind: EssvKind::Essence,
        space_id: essence.space_id().to_string(),
        provenance: Some(essence.provenance().clone()),
        config: config_snapshot,
    };
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_essence<T: Scalar>(path: &Path) -> Result<EssenceVector<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (data, l, d) = decode(&bytes)?;
    let sidecar: EssvSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.kind != EssvKind::Essence {
        return Err(EssenceError::Format(
            "sidecar kind is not 'essence'".into(),
        ));
    }
    let provenance = sidecar
        .provenance
        .ok_or_else(|| EssenceError::Format("essence sidecar lacks provenance".into()))?;
    EssenceVector::new(
        data.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect(),
        l,
        d,
        sidecar.space_id,
        provenance,
    )
}

pub fn write_latent<T: Scalar>(path: &Path, latent: &LatentCode<T>) -> Result<()> {
    let (l, d) = latent.shape();
    atomic_write(path, &encode(latent.data(), l, d))?;
    let sidecar = EssvSidecar {
        kind: EssvKind::Latent,
        space_id: latent.space_id().to_string(),
        provenance: None,
        config: serde_json::Value::Null,
    };
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn read_latent<T: Scalar>(path: &Path) -> Result<LatentCode<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (data, l, d) = decode(&bytes)?;
    let sidecar: EssvSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.kind != EssvKind::Latent {
        return Err(EssenceError::Format("sidecar kind is not 'latent'".into()));
    }
    LatentCode::new(
        data.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect(),
        l,
        d,
        sidecar.space_id,
    )
}
