//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `DYNAUG01`, a little-endian `u64` header length,
//! a JSON header, then every parameter value followed by every batch-norm
//! running statistic as little-endian `f64`, in the model's visitation order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, GatedModel, Variant};
use crate::nn::Parameterized;
use crate::rng::RngStream;
use crate::series::Normalizer;

const MAGIC: &[u8; 8] = b"DYNAUG01";

/// Everything needed to rebuild and use a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub arch: ArchConfig,
    pub augment: AugmentConfig,
    pub normalizer: Option<Normalizer>,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub iterations: usize,
}

impl CheckpointMeta {
    pub fn for_model(model: &GatedModel, augment: AugmentConfig, lambda: f64, seed: u64) -> Self {
        Self {
            variant: model.variant,
            arch: model.arch.clone(),
            augment,
            normalizer: None,
            lambda,
            seed,
            dataset: None,
            iterations: 0,
        }
    }
}

pub fn to_bytes(model: &GatedModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.variant != model.variant || meta.arch != model.arch {
        return Err(Error::Checkpoint(
            "metadata does not describe the model".into(),
        ));
    }
    let header = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_values: usize = model.params().iter().map(|p| p.len()).sum::<usize>()
        + model.buffers().iter().map(|b| b.len()).sum::<usize>();
    let mut out = Vec::with_capacity(16 + header.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for b in model.buffers() {
        for v in b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(GatedModel, CheckpointMeta)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    // Weights are overwritten below; the seed only fixes the shapes.
    let mut model = GatedModel::new(meta.arch.clone(), meta.variant, &mut RngStream::new(0))?;
    let body = &bytes[body_start..];
    let expected: usize = model.params().iter().map(|p| p.len()).sum::<usize>()
        + model.buffers().iter().map(|b| b.len()).sum::<usize>();
    if body.len() != 8 * expected {
        return Err(Error::Checkpoint(format!(
            "expected {} weight bytes, found {}",
            8 * expected,
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    for b in model.buffers_mut() {
        for v in b.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((model, meta))
}

pub fn save(path: &Path, model: &GatedModel, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(GatedModel, CheckpointMeta)> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
