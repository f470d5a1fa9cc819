use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record written next to the outputs of every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 over the resolved configuration and input bytes.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Incremental hash over labelled byte strings.
pub struct ConfigHash(Sha256);

impl ConfigHash {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    pub fn add(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub struct Run {
    command: String,
    started: String,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            started: now(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<()> {
        write_atomic(&path, contents)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn finish(self, dir: &Path, config_hash: String, seed: Option<u64>) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started: self.started,
            finished: now(),
            outputs: self.outputs,
        };
        let path = dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(path)
    }
}
