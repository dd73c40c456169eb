//! `weights.bin` + `weights.json` checkpoint format.
//!
//! `weights.bin` holds every parameter tensor as little-endian `f32`,
//! concatenated in manifest order. `weights.json` lists names, shapes and
//! byte offsets plus free-form model metadata (role, architecture, seed).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::learn::{ParamStore, Tensor};

pub const WEIGHTS_BIN: &str = "weights.bin";
pub const WEIGHTS_JSON: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub role: String,
    pub seed: u64,
    pub architecture: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save(
    dir: &Path,
    store: &ParamStore<f32>,
    role: &str,
    seed: u64,
    architecture: serde_json::Value,
    extra: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut bytes = Vec::with_capacity(store.num_values() * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for p in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: bytes.len() as u64,
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        role: role.to_string(),
        seed,
        architecture,
        tensors,
        extra,
    };
    let bin = dir.join(WEIGHTS_BIN);
    fs::write(&bin, &bytes).at(&bin)?;
    let json = dir.join(WEIGHTS_JSON);
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?).at(&json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let json = dir.join(WEIGHTS_JSON);
    if !json.exists() {
        return Err(Error::MissingArtifact {
            path: json,
            hint: "checkpoint manifest not found".into(),
        });
    }
    let text = fs::read(&json).at(&json)?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads a checkpoint, checking its role against `expected_role`.
pub fn load(dir: &Path, expected_role: &str) -> Result<(CheckpointManifest, ParamStore<f32>)> {
    let manifest = read_manifest(dir)?;
    if manifest.role != expected_role {
        return Err(Error::Input(format!(
            "checkpoint {} has role `{}`, expected `{expected_role}`",
            dir.display(),
            manifest.role
        )));
    }
    let bin = dir.join(WEIGHTS_BIN);
    let bytes = fs::read(&bin).at(&bin)?;
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        let chunk = bytes.get(start..end).ok_or_else(|| {
            Error::Input(format!("{} truncated at tensor `{}`", bin.display(), e.name))
        })?;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.push(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits_and_rejects_wrong_role() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.push("a", Tensor::from_fn(&[2, 3], |i| (i as f32).sin() * 1e-3));
        store.push("b", Tensor::scalar(-0.0f32));
        save(dir.path(), &store, "gender", 11, serde_json::json!({"w": 1}), serde_json::Value::Null)
            .unwrap();
        let (m, loaded) = load(dir.path(), "gender").unwrap();
        assert_eq!(m.seed, 11);
        assert_eq!(m.tensors[1].offset, 24);
        for (p, q) in store.iter().zip(loaded.iter()) {
            assert_eq!(p.value, q.value);
        }
        assert!(load(dir.path(), "san").is_err());
    }
}
