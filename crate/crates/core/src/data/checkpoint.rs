//! Binary model container.
//!
//! Layout: the 8 bytes `SMCERT01`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then every layer's entries as little-endian `f64` in
//! row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::MlpModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SMCERT01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The JSON header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// `[rows, cols]` of every layer.
    pub shapes: Vec<[usize; 2]>,
    pub input_bias: bool,
    /// Free-form training metadata (config echo, epoch, seed, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &MlpModel, metadata: serde_json::Value) -> Result<()> {
    let header = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        shapes: model.layers().iter().map(|w| [w.rows(), w.cols()]).collect(),
        input_bias: model.input_bias(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for w in model.layers() {
        for v in w.entries() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpModel, Checkpoint)> {
    let bytes = fs::read(path.as_ref())?;
    let bad = |detail: String| Error::format("checkpoint", detail);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing SMCERT01 magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header length {hlen} exceeds file")))?;
    let header: Checkpoint = serde_json::from_slice(&bytes[16..header_end])?;
    if header.format_version > CHECKPOINT_VERSION {
        return Err(bad(format!(
            "format version {} is newer than supported {CHECKPOINT_VERSION}",
            header.format_version
        )));
    }
    let expected: usize = header.shapes.iter().map(|[r, c]| r * c * 8).sum();
    let payload = &bytes[header_end..];
    if payload.len() != expected {
        return Err(bad(format!(
            "header declares {expected} payload bytes, file has {}",
            payload.len()
        )));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let layers = header
        .shapes
        .iter()
        .map(|&[r, c]| Matrix::new(r, c, floats.by_ref().take(r * c).collect()))
        .collect::<Result<Vec<_>>>()?;
    let model = MlpModel::build(layers, header.input_bias)?;
    Ok((model, header))
}
