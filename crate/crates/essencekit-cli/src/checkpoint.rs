//! TENC1 checkpoint container for fine-tuned toy essence encoders.
//!
//! Layout: 5 magic bytes `TENC1`, u32 little-endian rows, u32 little-endian
//! cols, then rows*cols float32 little-endian parameters (the inverter
//! weight matrix, row-major). A mandatory JSON sidecar at `<path>.json`
//! records the profile it was trained against and the training config.

use std::io::Read;
use std::path::Path;

use essencekit::essv::{atomic_write, sidecar_path};
use essencekit::{EssenceError, Result};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 5] = b"TENC1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub profile: String,
    pub profile_digest: String,
    pub space_id: String,
    /// Digest of the training config; stamped into extraction provenance.
    pub config_digest: String,
    pub train_config: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    params: &[f64],
    rows: usize,
    cols: usize,
    sidecar: &CheckpointSidecar,
) -> Result<()> {
    if params.len() != rows * cols {
        return Err(EssenceError::dim_mismatch(
            "write_checkpoint",
            rows * cols,
            params.len(),
        ));
    }
    let mut bytes = Vec::with_capacity(13 + params.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in params {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)?;
    atomic_write(
        &sidecar_path(path),
        serde_json::to_string_pretty(sidecar)?.as_bytes(),
    )
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<f64>, usize, usize, CheckpointSidecar)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        return Err(EssenceError::Format("missing TENC1 magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if bytes.len() != 13 + rows * cols * 4 {
        return Err(EssenceError::Format(format!(
            "checkpoint payload length {} does not match header {rows}x{cols}",
            bytes.len() - 13
        )));
    }
    let params = bytes[13..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((params, rows, cols, sidecar))
}
