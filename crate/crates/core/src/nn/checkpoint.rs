//! Versioned binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, training hyper-parameters, optional normalizer, parameter
//! count), then the flat parameters as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, TrainHyper};
use crate::dataset::Normalizer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HRVBOLDM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    pub normalizer: Option<Normalizer>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    hyper: TrainHyper,
    normalizer: Option<Normalizer>,
    n_params: usize,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let expected = ckpt.config.param_count()?;
    if expected != ckpt.params.len() {
        return Err(Error::Shape(format!(
            "config implies {expected} parameters, got {}",
            ckpt.params.len()
        )));
    }
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        hyper: ckpt.hyper.clone(),
        normalizer: ckpt.normalizer.clone(),
        n_params: ckpt.params.len(),
    })?;
    let mut buf = Vec::with_capacity(20 + header.len() + 8 * ckpt.params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in &ckpt.params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let bad = |reason: &str| Error::format(file.clone(), reason);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let data = &bytes[20 + header_len..];
    if data.len() != 8 * header.n_params || header.config.param_count()? != header.n_params {
        return Err(bad("parameter block does not match the stored config"));
    }
    let values = data
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        config: header.config,
        hyper: header.hyper,
        normalizer: header.normalizer,
        params: ModelParams { values },
    })
}
