//! Output directory bookkeeping: every emitted file is hashed and listed in
//! `results.json`; warnings go to `diagnostics.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Warning {
    pub cloud: Option<String>,
    pub cell: Option<String>,
    pub message: String,
}

pub struct Output {
    root: PathBuf,
    files: Vec<FileEntry>,
    warnings: Vec<Warning>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Output {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Output {
            root: root.to_path_buf(),
            files: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` under the root and records its checksum.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel, bytes);
        Ok(())
    }

    /// Renders into memory with `f`, then writes.
    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> pbgeom::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Records a file some other code already wrote.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.root.join(rel)).with_context(|| format!("reading back {rel}"))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn warn(&mut self, cloud: Option<String>, cell: Option<String>, message: impl Into<String>) {
        let w = Warning {
            cloud,
            cell,
            message: message.into(),
        };
        log::warn!(
            "{}{}{}",
            w.cloud.as_deref().map(|c| format!("{c}: ")).unwrap_or_default(),
            w.cell.as_deref().map(|c| format!("[{c}] ")).unwrap_or_default(),
            w.message
        );
        self.warnings.push(w);
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// Writes `diagnostics.json` and `results.json`; returns the results path.
    pub fn finish(mut self, command: &str, config: &impl Serialize) -> Result<PathBuf> {
        let diag = serde_json::to_vec_pretty(&serde_json::json!({ "warnings": self.warnings }))?;
        self.write("diagnostics.json", &diag)?;
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let results = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "files": self.files,
        });
        let path = self.root.join("results.json");
        fs::write(&path, serde_json::to_vec_pretty(&results)?)?;
        Ok(path)
    }
}

/// Recomputes every checksum listed in a `results.json`; returns the
/// mismatching paths.
pub fn verify(results: &Path) -> Result<Vec<String>> {
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(results)?)?;
    let root = results.parent().unwrap_or(Path::new("."));
    let mut bad = Vec::new();
    for f in doc["files"].as_array().into_iter().flatten() {
        let rel = f["path"].as_str().unwrap_or_default();
        let ok = fs::read(root.join(rel))
            .map(|b| Some(sha256_hex(&b).as_str()) == f["sha256"].as_str())
            .unwrap_or(false);
        if !ok {
            bad.push(rel.to_string());
        }
    }
    Ok(bad)
}
