//! `STGC` model checkpoints.
//!
//! Layout, integers little-endian: magic `STGC`, version byte, `u32` length
//! of the JSON model config followed by the config, `u32` tensor count, then
//! per tensor a `u16` name length, the UTF-8 name and an embedded `STGT`
//! tensor. Tensors appear in [`ModelParams::tensors`] order.

use std::path::Path;

use stgg_core::stgcn::{ModelConfig, ModelParams};

use crate::tensor::{FormatError, Reader, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"STGC";
pub const CHECKPOINT_VERSION: u8 = 1;

fn bad(msg: impl Into<String>) -> FormatError {
    FormatError::Checkpoint(msg.into())
}

pub fn encode(params: &ModelParams) -> Result<Vec<u8>, FormatError> {
    let config = serde_json::to_vec(&params.config).map_err(|e| bad(e.to_string()))?;
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        Tensor::new(dims, data.to_vec())?.write_to(&mut out)?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate().map_err(|e| bad(e.to_string()))?;
    // Expected names and shapes come from the config itself.
    let expected: Vec<(String, Vec<usize>)> = ModelParams::zeros(&config)
        .tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, config needs {}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_dims) in expected {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != want_name {
            return Err(bad(format!("tensor {name:?} where {want_name:?} was expected")));
        }
        let t = Tensor::read_from(&mut r)?;
        if t.dims != want_dims {
            return Err(bad(format!("{name} has shape {:?}, expected {:?}", t.dims, want_dims)));
        }
        tensors.push(t.data);
    }
    r.finish()?;
    ModelParams::from_tensors(config, tensors).map_err(|e| bad(e.to_string()))
}

pub fn save(path: &Path, params: &ModelParams) -> Result<(), FormatError> {
    std::fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, FormatError> {
    decode(&std::fs::read(path)?)
}
