//! Run manifests and configuration hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

/// Bumped whenever a stage's output changes for an unchanged configuration.
pub const PIPELINE_REVISION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub revision: u32,
    pub version: String,
    /// The hashed configuration, for regeneration.
    pub config: serde_json::Value,
}

/// SHA-256 over the compact JSON of `value`. `serde_json` maps are ordered,
/// so equal values hash equally.
pub fn config_hash(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read(path: &Path) -> Option<RunManifest> {
    let bytes = std::fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

pub fn write(path: &Path, m: &RunManifest) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(m)?)?;
    Ok(())
}

pub fn new_manifest(stage: &str, seed: u64, config: serde_json::Value) -> RunManifest {
    let keyed = serde_json::json!({ "stage": stage, "revision": PIPELINE_REVISION, "config": config });
    RunManifest {
        stage: stage.to_string(),
        config_hash: config_hash(&keyed),
        seed,
        revision: PIPELINE_REVISION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
    }
}
