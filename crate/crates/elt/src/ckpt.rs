//! Checkpoint format `elt-ckpt-v1`.
//!
//! A little-endian u32 manifest length, a JSON manifest (version, model
//! config, tensor table with names/shapes/dtype/byte offsets), then one
//! binary blob of raw little-endian IEEE-754 arrays. Serialization order is
//! the canonical parameter visit order, so identical parameters produce
//! byte-identical files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};
use crate::model::{BlockParams, LoopConfig};
use crate::numerics::{DType, Tensor};

pub const CKPT_VERSION: &str = "elt-ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: usize,
    byte_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: LoopConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_to_vec(cfg: &LoopConfig, params: &BlockParams) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    params.visit(|name, t| {
        let offset = blob.len();
        match t.dtype() {
            DType::F64 => {
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::F32 => {
                for v in t.data() {
                    blob.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: t.dtype(),
            offset,
            byte_len: blob.len() - offset,
        });
    });
    let manifest = Manifest {
        version: CKPT_VERSION.to_string(),
        config: cfg.clone(),
        tensors: entries,
    };
    let mjson = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(4 + mjson.len() + blob.len());
    out.extend_from_slice(&(mjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&mjson);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save(path: &Path, cfg: &LoopConfig, params: &BlockParams) -> Result<()> {
    let bytes = save_to_vec(cfg, params)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_from_slice(bytes: &[u8]) -> Result<(LoopConfig, BlockParams)> {
    if bytes.len() < 4 {
        return Err(EltError::Checkpoint("file shorter than header".to_string()));
    }
    let mlen = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    if bytes.len() < 4 + mlen {
        return Err(EltError::Checkpoint("manifest truncated".to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[4..4 + mlen])?;
    if manifest.version != CKPT_VERSION {
        return Err(EltError::Checkpoint(format!(
            "unsupported version {:?}, expected {CKPT_VERSION:?}",
            manifest.version
        )));
    }
    manifest.config.validate()?;
    let blob = &bytes[4 + mlen..];

    let mut by_name: HashMap<&str, &TensorEntry> = HashMap::new();
    for e in &manifest.tensors {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(EltError::Checkpoint(format!("duplicate tensor {}", e.name)));
        }
    }

    // Materialize the structural skeleton for this config, then fill every
    // tensor from the blob; names must match exactly.
    let mut params = BlockParams::init(&manifest.config, 0)?;
    let mut missing = Vec::new();
    let mut used = 0usize;
    let mut fill_err: Option<EltError> = None;
    params.visit_mut(|name, t| {
        if fill_err.is_some() {
            return;
        }
        let entry = match by_name.get(name) {
            Some(e) => e,
            None => {
                missing.push(name.to_string());
                return;
            }
        };
        used += 1;
        if entry.shape != t.shape() {
            fill_err = Some(EltError::Checkpoint(format!(
                "tensor {name}: shape {:?} in file, {:?} expected",
                entry.shape,
                t.shape()
            )));
            return;
        }
        let numel: usize = entry.shape.iter().product();
        let width = entry.dtype.byte_width();
        if entry.byte_len != numel * width || entry.offset + entry.byte_len > blob.len() {
            fill_err = Some(EltError::Checkpoint(format!(
                "tensor {name}: bad extent (offset {}, len {})",
                entry.offset, entry.byte_len
            )));
            return;
        }
        let raw = &blob[entry.offset..entry.offset + entry.byte_len];
        let data: Vec<f64> = match entry.dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        match Tensor::from_vec(entry.shape.clone(), data) {
            Ok(new_t) => *t = new_t.with_dtype(entry.dtype),
            Err(e) => fill_err = Some(e),
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(EltError::Checkpoint(format!(
            "missing tensors: {}",
            missing.join(", ")
        )));
    }
    if used != manifest.tensors.len() {
        return Err(EltError::Checkpoint(format!(
            "{} tensors in file, {used} consumed",
            manifest.tensors.len()
        )));
    }
    Ok((manifest.config, params))
}

pub fn load(path: &Path) -> Result<(LoopConfig, BlockParams)> {
    let bytes = fs::read(path)?;
    load_from_slice(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = LoopConfig::masked(2, 16, 4, 32, 1, 4, 4, 8, 2);
        let params = BlockParams::init(&cfg, 42).unwrap();
        let bytes = save_to_vec(&cfg, &params).unwrap();
        let (cfg2, params2) = load_from_slice(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        let bytes2 = save_to_vec(&cfg2, &params2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn rejects_wrong_version() {
        let cfg = LoopConfig::masked(1, 8, 2, 16, 1, 2, 4, 4, 1);
        let params = BlockParams::init(&cfg, 0).unwrap();
        let mut bytes = save_to_vec(&cfg, &params).unwrap();
        let mlen = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let mut manifest: serde_json::Value =
            serde_json::from_slice(&bytes[4..4 + mlen]).unwrap();
        manifest["version"] = serde_json::Value::String("elt-ckpt-v0".to_string());
        let mjson = serde_json::to_vec(&manifest).unwrap();
        let blob = bytes.split_off(4 + mlen);
        let mut out = (mjson.len() as u32).to_le_bytes().to_vec();
        out.extend_from_slice(&mjson);
        out.extend_from_slice(&blob);
        assert!(load_from_slice(&out).is_err());
    }

    #[test]
    fn diffusion_roundtrip_preserves_values() {
        let cfg = LoopConfig::diffusion(1, 8, 2, 16, 1, 3, 2, 3, 2);
        let params = BlockParams::init(&cfg, 9).unwrap();
        let bytes = save_to_vec(&cfg, &params).unwrap();
        let (_, loaded) = load_from_slice(&bytes).unwrap();
        let mut originals = Vec::new();
        params.visit(|n, t| originals.push((n.to_string(), t.clone())));
        let mut i = 0;
        loaded.visit(|n, t| {
            assert_eq!(originals[i].0, n);
            assert_eq!(&originals[i].1, t);
            i += 1;
        });
    }
}
