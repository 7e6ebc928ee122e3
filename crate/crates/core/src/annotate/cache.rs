use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    key: String,
    model: String,
    response: String,
}

/// Content hash of (model, prompt).
pub fn cache_key(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update((model.len() as u64).to_le_bytes());
    h.update(model.as_bytes());
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Append-only JSON-lines response cache. Later lines win on reload.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key, e.response);
                    }
                    Err(e) => log::warn!("{}:{}: skipping corrupt cache line: {e}", path.display(), n + 1),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn get(&self, model: &str, prompt: &str) -> Option<String> {
        self.entries.lock().expect("poisoned").get(&cache_key(model, prompt)).cloned()
    }

    pub fn put(&self, model: &str, prompt: &str, response: &str) -> Result<()> {
        let key = cache_key(model, prompt);
        let mut file = self.file.lock().expect("poisoned");
        if let Some(f) = file.as_mut() {
            let line = serde_json::to_string(&Entry {
                key: key.clone(),
                model: model.to_string(),
                response: response.to_string(),
            })?;
            let path = self.path.clone().unwrap_or_default();
            writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.entries.lock().expect("poisoned").insert(key, response.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let weird = "3\n\t\"quoted\" \u{1F600} \\ trailing  ";
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("m", "p1", weird).unwrap();
            c.put("m", "p2", "first").unwrap();
            c.put("m", "p2", "second").unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get("m", "p1").unwrap(), weird);
        assert_eq!(c.get("m", "p2").unwrap(), "second");
        assert_eq!(c.get("other", "p1"), None);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn keys_separate_model_and_prompt() {
        assert_ne!(cache_key("ab", "c"), cache_key("a", "bc"));
    }
}
