//! Run manifests: every command records what it ran, on which inputs (by
//! digest), what it wrote, and how long each stage took. Identical inputs
//! reproduce identical output files; the manifest's timing block is the one
//! part allowed to differ between reruns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const MANIFEST_FORMAT: &str = "goalskit.manifest.v1";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    /// Resolved configuration after merging defaults, config file, and flags.
    pub config: Value,
    pub seeds: Vec<u64>,
    /// SHA-256 digests of every input file, keyed by path as given.
    pub input_hashes: BTreeMap<String, String>,
    /// File names written into the output directory, sorted.
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage. Excluded from reproducibility claims.
    pub timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seeds: vec![],
            input_hashes: BTreeMap::new(),
            outputs: vec![],
            timings_seconds: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_hashes
            .insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push(name);
    }

    /// Time a stage, accumulating if the stage name repeats.
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        *self
            .timings_seconds
            .entry(stage.to_string())
            .or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    /// Write `manifest.json` into the output directory; returns its path.
    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.outputs.sort();
        self.outputs.dedup();
        let path = out_dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self).context("serializing manifest")?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing input {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}
