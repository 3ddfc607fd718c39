//! Run manifests and output bookkeeping.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nfe: Option<NfeSummary>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct NfeSummary {
    pub per_chain: usize,
    pub total: usize,
}

/// Collects outputs under one directory; each path is written once and the
/// manifest is written last.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
    pub nfe: Option<NfeSummary>,
}

impl OutputDir {
    pub fn create(root: &Path) -> AppResult<Self> {
        fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            nfe: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> AppResult<()> {
        if self.outputs.iter().any(|o| o.path == rel) {
            return Err(AppError::config("output", format!("`{rel}` written twice")));
        }
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| AppError::io(&path, e))?;
        self.outputs.push(OutputEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> AppResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes a file that is excluded from the manifest (wall-clock data).
    pub fn write_unlisted(&self, rel: &str, bytes: &[u8]) -> AppResult<()> {
        let path = self.root.join(rel);
        fs::write(&path, bytes).map_err(|e| AppError::io(&path, e))
    }

    pub fn finish(self, subcommand: &str, config_text: &str, seed: u64) -> AppResult<Manifest> {
        let manifest = Manifest {
            tool: "alps",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            outputs: self.outputs,
            warnings: self.warnings,
            nfe: self.nfe,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
        Ok(manifest)
    }
}
