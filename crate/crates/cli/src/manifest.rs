use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Versions {
    pub zigzag_cli: &'static str,
    pub zigzag_core: &'static str,
}

/// Written next to the primary output of every subcommand. Everything but
/// `wall_time_secs` is a function of the arguments.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub wall_time_secs: f64,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command,
            config,
            seed,
            versions: Versions {
                zigzag_cli: env!("CARGO_PKG_VERSION"),
                zigzag_core: zigzag_core::VERSION,
            },
            wall_time_secs: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Hashes `outputs` and writes the manifest to `manifest_path(primary)`.
    pub fn finish(mut self, primary: &Path, outputs: &[PathBuf], wall_time_secs: f64) -> std::io::Result<PathBuf> {
        self.wall_time_secs = wall_time_secs;
        for p in outputs {
            self.outputs.push(OutputDigest {
                file: p
                    .file_name()
                    .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
                sha256: sha256_file(p)?,
            });
        }
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// `run.csv` → `run.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    sibling(primary, "manifest.json")
}

/// `run.csv` → `run.<suffix>`.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    primary.with_extension(suffix)
}
