//! Run manifest: every emitted file with its content hash, for
//! reproducibility checks across runs.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    pub out_dir: String,
    pub tool_version: String,
    pub wall_clock_s: f64,
    pub files: Vec<ManifestFile>,
}

pub fn sha256_hex(content: &[u8]) -> String {
    let digest = Sha256::digest(content);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `(name, content)` pairs under `dir` and returns their manifest
/// entries in the same order.
pub fn write_files(dir: &Path, files: &[(String, String)]) -> io::Result<Vec<ManifestFile>> {
    std::fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|(name, content)| {
            std::fs::write(dir.join(name), content)?;
            Ok(ManifestFile {
                name: name.clone(),
                sha256: sha256_hex(content.as_bytes()),
                bytes: content.len() as u64,
            })
        })
        .collect()
}
