//! Content hashes of input files and the run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Memoized SHA-256 of input files.
#[derive(Debug, Default)]
pub struct Hashes {
    known: BTreeMap<PathBuf, String>,
}

impl Hashes {
    pub fn of(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.known.get(path) {
            return Ok(h.clone());
        }
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = reader.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        let h = hex::encode(hasher.finalize());
        self.known.insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    pub fn all(&self) -> &BTreeMap<PathBuf, String> {
        &self.known
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub seed: u64,
    /// Validation-split seed of every fold, per dataset.
    pub fold_seeds: BTreeMap<String, Vec<u64>>,
    pub inputs: &'a BTreeMap<PathBuf, String>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest<'_> {
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
