//! Checkpoint directory: `manifest.json` plus a flat little-endian f64 blob
//! `params.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub total_bytes: usize,
}

pub fn save_checkpoint(dir: &Path, config: &ModelConfig, params: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(params.numel() * 8);
    let mut tensors = Vec::with_capacity(params.len());
    for (_, name, t) in params.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: blob.len() });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { config: config.clone(), tensors, total_bytes: blob.len() };
    let path = dir.join(BLOB_FILE);
    fs::write(&path, &blob).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ParamStore)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let path = dir.join(BLOB_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() != manifest.total_bytes {
        return Err(Error::Invalid(format!("{BLOB_FILE} has {} bytes, manifest says {}", blob.len(), manifest.total_bytes)));
    }
    let mut store = ParamStore::new();
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 8;
        let bytes = blob.get(entry.offset..end).ok_or_else(|| {
            Error::Invalid(format!("tensor `{}` runs past the end of {BLOB_FILE}", entry.name))
        })?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    Ok((manifest.config, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::from_rows(&[vec![0.1, -0.0, 1e-300], vec![f64::MIN_POSITIVE, 3.5, -7.25]]).unwrap()).unwrap();
        store.insert("b", Tensor::from_rows(&[vec![std::f64::consts::PI]]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::default();
        save_checkpoint(dir.path(), &cfg, &store).unwrap();
        let (cfg2, back) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(back.checksum(), store.checksum());
        assert_eq!(back.get(back.find("a").unwrap()).data()[1].to_bits(), (-0.0f64).to_bits());
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["tensors"][1]["offset"], 48);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::full(&[2, 2], 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ModelConfig::default(), &store).unwrap();
        fs::write(dir.path().join(BLOB_FILE), [0u8; 8]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
