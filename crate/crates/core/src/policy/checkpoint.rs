//! Checkpoint persistence: a self-describing JSON container mapping tensor
//! names to shape-annotated flat arrays, plus run metadata. Values are
//! written with shortest-round-trip formatting, so save/load is bit-stable.

use super::{MeanDivisor, Mode, ModelConfig, PolicyParams};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

/// Run metadata stored alongside the tensors.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointMeta {
    pub mode: Mode,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    mode: String,
    alpha: f64,
    seed: u64,
    layers: usize,
    hidden: usize,
    gamma: f64,
    score_scale: f64,
    mean_divisor: String,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &PolicyParams,
    meta: CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    params.for_each_tensor(|name, m| {
        tensors.push(TensorEntry {
            name,
            rows: m.rows,
            cols: m.cols,
            data: m.data.clone(),
        });
    });
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        mode: meta.mode.to_string(),
        alpha: meta.alpha,
        seed: meta.seed,
        layers: params.config.layers,
        hidden: params.config.hidden,
        gamma: params.config.gamma,
        score_scale: params.config.score_scale,
        mean_divisor: params.config.mean_divisor.to_string(),
        tensors,
    };
    let io_err = |source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(&path, text).map_err(io_err)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(PolicyParams, CheckpointMeta), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(&path).map_err(io_err)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Incompatible(format!(
            "format version {} (supported: {})",
            file.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let mode: Mode = file
        .mode
        .parse()
        .map_err(CheckpointError::Incompatible)?;
    let mean_divisor: MeanDivisor = file
        .mean_divisor
        .parse()
        .map_err(CheckpointError::Incompatible)?;
    let config = ModelConfig {
        hidden: file.hidden,
        layers: file.layers,
        gamma: file.gamma,
        score_scale: file.score_scale,
        mean_divisor,
    };
    // start from a well-formed parameter set, then overwrite tensor by tensor
    let mut params = PolicyParams::init(config, 0);
    let mut expected = Vec::new();
    params.for_each_tensor(|name, m| expected.push((name, m.rows, m.cols)));
    if expected.len() != file.tensors.len() {
        return Err(CheckpointError::Incompatible(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    let mut flat = Vec::new();
    for ((name, rows, cols), entry) in expected.iter().zip(&file.tensors) {
        if name != &entry.name || *rows != entry.rows || *cols != entry.cols {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {} with shape {}x{} (expected {} with {}x{})",
                entry.name, entry.rows, entry.cols, name, rows, cols
            )));
        }
        if entry.data.len() != rows * cols {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {} has {} values, expected {}",
                entry.name,
                entry.data.len(),
                rows * cols
            )));
        }
        if entry.data.iter().any(|x| !x.is_finite()) {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {} contains non-finite values",
                entry.name
            )));
        }
        flat.extend_from_slice(&entry.data);
    }
    params.set_from_flat(&flat);
    let meta = CheckpointMeta {
        mode,
        alpha: file.alpha,
        seed: file.seed,
    };
    Ok((params, meta))
}

/// FNV-1a hash of a file's bytes, for manifests that record which
/// checkpoint produced an artifact.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String, CheckpointError> {
    let bytes = std::fs::read(&path).map_err(|source| CheckpointError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(format!("{h:016x}"))
}
