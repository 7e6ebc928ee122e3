use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance written next to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: BTreeMap<String, String>,
    pub config_hashes: BTreeMap<String, String>,
    pub store_hashes: BTreeMap<String, String>,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            arguments: BTreeMap::new(),
            config_hashes: BTreeMap::new(),
            store_hashes: BTreeMap::new(),
            master_seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: BTreeMap::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.arguments.insert(key.to_string(), value.to_string());
        self
    }

    pub fn config(&mut self, path: &Path) -> Result<&mut Self> {
        self.config_hashes.insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn store(&mut self, path: &Path) -> Result<&mut Self> {
        self.store_hashes.insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    /// Hashes every written file and saves `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, written: &[std::path::PathBuf]) -> Result<()> {
        for p in written {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.outputs.insert(name, sha256_file(p)?);
        }
        self.finished_at = now();
        let path = dir.join("manifest.json");
        let mut body = serde_json::to_string_pretty(&self)?;
        body.push('\n');
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
