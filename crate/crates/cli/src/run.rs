//! Per-invocation context: input bookkeeping, artifact registration and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct InputRecord {
    role: String,
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ArtifactRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_digest: &'a str,
    seed: Option<u64>,
    inputs: &'a [InputRecord],
    artifacts: Vec<ArtifactRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub seed: Option<u64>,
    config_dir: PathBuf,
    config_digest: String,
    inputs: Vec<InputRecord>,
    artifacts: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, config: &Path, config_bytes: &[u8], out: PathBuf) -> Self {
        Self {
            command,
            out,
            seed: None,
            config_dir: config.parent().map(Path::to_path_buf).unwrap_or_default(),
            config_digest: sha256_hex(config_bytes),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Name recorded for an input: relative to the config directory when possible, else the file name.
    fn display_name(&self, path: &Path) -> String {
        let rel = if self.config_dir.as_os_str().is_empty() {
            path.is_relative().then_some(path)
        } else {
            path.strip_prefix(&self.config_dir).ok()
        };
        match rel {
            Some(r) => r.to_string_lossy().replace('\\', "/"),
            None => path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), Failure> {
        let sha256 = hash_file(path)?;
        self.inputs.push(InputRecord {
            role: role.into(),
            file: self.display_name(path),
            sha256,
        });
        Ok(())
    }

    /// Absolute location of an output; parent directories are created.
    pub fn artifact(&mut self, rel: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.into());
        }
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.artifact(rel)?;
        fs::write(&path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
    }

    /// Hashes every artifact and writes the manifest; returns its path.
    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        self.artifacts.sort();
        let artifacts = self
            .artifacts
            .iter()
            .map(|rel| {
                Ok(ArtifactRecord {
                    path: rel.clone(),
                    sha256: hash_file(&self.out.join(rel))?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let manifest = Manifest {
            command: self.command,
            config_digest: &self.config_digest,
            seed: self.seed,
            inputs: &self.inputs,
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out.join(MANIFEST_FILE);
        fs::create_dir_all(&self.out).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", self.out.display())))?;
        fs::write(&path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
