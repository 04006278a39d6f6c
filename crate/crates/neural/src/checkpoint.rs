//! Checkpoint format: a JSON index mapping tensor names to
//! `{offset, shape, dtype}` plus one flat little-endian `f32` blob.
//! Arbitrary metadata (config, normalization statistics, seed) rides in the
//! index under `meta`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// Byte offset into the blob.
    pub offset: usize,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format_version: u32,
    pub blob: String,
    pub tensors: BTreeMap<String, TensorEntry>,
    pub meta: serde_json::Value,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save<S: Scalar>(stem: &Path, store: &ParamStore<S>, meta: serde_json::Value) -> Result<()> {
    let (json_path, bin_path) = paths(stem);
    let mut blob = Vec::with_capacity(store.weight_count() * 4);
    let mut tensors = BTreeMap::new();
    for id in store.ids() {
        let t = store.get(id);
        tensors.insert(
            store.name(id).to_string(),
            TensorEntry { offset: blob.len(), shape: t.shape().to_vec(), dtype: "f32".into() },
        );
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let index = CheckpointIndex {
        format_version: CHECKPOINT_VERSION,
        blob: bin_path.file_name().unwrap().to_string_lossy().into_owned(),
        tensors,
        meta,
    };
    if let Some(dir) = json_path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin_path, &blob)?;
    fs::write(&json_path, serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn read_index(stem: &Path) -> Result<CheckpointIndex> {
    let (json_path, _) = paths(stem);
    let index: CheckpointIndex = serde_json::from_slice(&fs::read(&json_path)?)?;
    if index.format_version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format version {}", index.format_version)));
    }
    Ok(index)
}

/// Loads tensors into `store` (names and shapes must match) and returns the
/// index metadata.
pub fn load<S: Scalar>(stem: &Path, store: &mut ParamStore<S>) -> Result<serde_json::Value> {
    let index = read_index(stem)?;
    let blob_path = stem.with_file_name(&index.blob);
    let blob = fs::read(blob_path)?;
    if index.tensors.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            index.tensors.len(),
            store.len()
        )));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let entry = index
            .tensors
            .get(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
        if entry.shape != store.get(id).shape() || entry.dtype != "f32" {
            return Err(NnError::Checkpoint(format!("tensor {name} has shape {:?}", entry.shape)));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > blob.len() {
            return Err(NnError::Checkpoint(format!("tensor {name} overruns blob")));
        }
        let data: Vec<S> = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| S::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        *store.get_mut(id) = Tensor::new(&entry.shape, data)?;
    }
    Ok(index.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamBuilder};

    #[test]
    fn roundtrip_preserves_f32_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut pb = ParamBuilder::new(5);
        pb.add("a.w", &[3, 4], Init::TruncNormal(0.02));
        pb.add("a.b", &[4], Init::Zeros);
        let store: ParamStore<f32> = pb.finish();
        let stem = dir.path().join("ckpt");
        save(&stem, &store, serde_json::json!({"seed": 5})).unwrap();

        let mut other = store.clone();
        for t in other.tensors_mut() {
            t.scale_in_place(0.0);
        }
        let meta = load(&stem, &mut other).unwrap();
        assert_eq!(meta["seed"], 5);
        assert_eq!(other.tensors(), store.tensors());
        let idx = read_index(&stem).unwrap();
        assert_eq!(idx.tensors["a.b"].offset, 48);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[2, 2]));
        let stem = dir.path().join("c");
        save(&stem, &s, serde_json::Value::Null).unwrap();
        let mut t = ParamStore::<f32>::new();
        t.add("w", Tensor::zeros(&[4]));
        assert!(load(&stem, &mut t).is_err());
    }
}
