//! Reproducibility manifest written by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub role: String,
    /// Relative to the input root or the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Hash over the config and every input hash.
    pub content_hash: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Object id the way git computes it (`blob <len>\0<bytes>`), over SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn hash_files(role: &str, root: &Path, files: &[PathBuf]) -> Result<Vec<FileHash>, CliError> {
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let bytes = fs::read(f).map_err(|e| CliError::Runtime(format!("{}: {e}", f.display())))?;
        out.push(FileHash {
            role: role.to_string(),
            path: rel(root, f),
            sha256: blob_hash(&bytes),
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Every regular file under `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::Config(format!("{}: {e}", d.display())))?;
        for e in entries {
            let p = e.map_err(|e| CliError::Runtime(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Manifest {
    pub fn new(
        command: &'static str,
        seed: u64,
        config: serde_json::Value,
        inputs: Vec<FileHash>,
        outputs: Vec<FileHash>,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&config).expect("json value serializes"));
        for i in &inputs {
            h.update(i.role.as_bytes());
            h.update(i.path.as_bytes());
            h.update(i.sha256.as_bytes());
        }
        Self {
            tool: "gbe",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs,
            outputs,
            content_hash: hex(&h.finalize()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
