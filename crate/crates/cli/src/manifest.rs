//! Artifact manifest: every file a job wrote, with its content hash.

use std::fs;
use std::path::Path;

use serde::Serialize;
use ubp_core::provenance::sha256_hex;
use ubp_core::{Result, UbpError};

#[derive(Debug, Serialize)]
pub struct Artifact {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: C,
    pub artifacts: Vec<Artifact>,
}

/// Hashes `files` (relative to `dir`) and writes `dir/manifest.json`.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &'static str,
    seed: u64,
    config: C,
    files: &[String],
) -> Result<()> {
    let mut artifacts = files
        .iter()
        .map(|rel| {
            let path = dir.join(rel);
            let bytes = fs::read(&path).map_err(|e| UbpError::io(&path, e))?;
            Ok(Artifact {
                path: rel.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command,
        seed,
        config_hash: ubp_core::provenance::config_hash(&config),
        config,
        artifacts,
    };
    crate::commands::write_json(&dir.join("manifest.json"), &manifest)
}
