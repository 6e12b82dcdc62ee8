//! Timestamped artifact directories and their manifest.

use anyhow::{Context, Result};
use memsim::config::ExperimentConfig;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Environment variable overriding the artifact root.
pub const ARTIFACT_DIR_ENV: &str = "MEMSIM_ARTIFACT_DIR";

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn artifact_root() -> PathBuf {
    std::env::var_os(ARTIFACT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// An output directory that records every file written through it.
pub struct ArtifactDir {
    path: PathBuf,
    files: Vec<String>,
}

impl ArtifactDir {
    /// Creates `<root>/<label>-<YYYYmmdd-HHMMSS>`, adding a counter suffix
    /// when that directory already exists.
    pub fn create(root: &Path, label: &str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{label}-{stamp}");
        for n in 0.. {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let path = root.join(name);
            match std::fs::create_dir(&path) {
                Ok(()) => return Ok(ArtifactDir { path, files: Vec::new() }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes one artifact through a buffered writer.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> memsim::Result<()>,
    {
        let path = self.path.join(name);
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut out).with_context(|| format!("writing {name}"))?;
        out.flush()?;
        self.files.push(name.to_string());
        Ok(path)
    }

    /// Writes `manifest.json`: the normalized config, the hashes of the
    /// input files and of every artifact.
    pub fn finish(self, cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<PathBuf> {
        let mut artifacts = Vec::new();
        for name in &self.files {
            let bytes = std::fs::read(self.path.join(name))?;
            artifacts.push(json!({ "file": name, "bytes": bytes.len(), "sha256": sha256_hex(&bytes) }));
        }
        let mut input_hashes = Vec::new();
        for path in inputs {
            let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
            input_hashes.push(json!({ "path": path.display().to_string(), "sha256": sha256_hex(&bytes) }));
        }
        let manifest = json!({
            "tool": "memsim",
            "version": env!("CARGO_PKG_VERSION"),
            "created": chrono::Local::now().to_rfc3339(),
            "experiment": cfg.experiment,
            "config": cfg,
            "config_toml": cfg.to_toml_string(),
            "inputs": input_hashes,
            "artifacts": artifacts,
        });
        let path = self.path.join(MANIFEST_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(self.path)
    }
}
