use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatMessage, LlmError, LlmRequest, LlmResponse};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// Hex SHA-256 of the canonical JSON of (model, messages, temperature,
/// max_tokens). The request tag is deliberately left out.
pub fn cache_key(request: &LlmRequest) -> String {
    let material = KeyMaterial {
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    let json = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(json))
}

/// One line of the cache file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: LlmRequest,
    pub response: LlmResponse,
    pub timestamp: String,
}

/// Append-only JSONL response cache keyed by [`cache_key`].
///
/// Entries are loaded once at open; lookups afterwards only take a read
/// lock, and appends go through a single writer.
#[derive(Debug)]
pub struct Cache {
    path: PathBuf,
    entries: RwLock<HashMap<String, LlmResponse>>,
    writer: Mutex<File>,
    corrupted: usize,
}

impl Cache {
    /// Opens (creating if needed) the cache at `path`. Lines that fail to
    /// parse or whose key does not match their request are skipped with a
    /// warning.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut entries = HashMap::new();
        let mut corrupted = 0;
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) if entry.key == cache_key(&entry.request) => {
                        let mut response = entry.response;
                        response.from_cache = false;
                        entries.insert(entry.key, response);
                    }
                    Ok(_) => {
                        corrupted += 1;
                        log::warn!("{}:{}: cache key does not match request; ignored", path.display(), i + 1);
                    }
                    Err(e) => {
                        corrupted += 1;
                        log::warn!("{}:{}: unreadable cache entry ({e}); ignored", path.display(), i + 1);
                    }
                }
            }
        }
        let mut writer = OpenOptions::new().create(true).append(true).open(path)?;
        // A torn final line from an interrupted run must not swallow the next append.
        let len = writer.metadata()?.len();
        if len > 0 {
            let content = std::fs::read(path)?;
            if content.last() != Some(&b'\n') {
                writer.write_all(b"\n")?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
            corrupted,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines skipped at open.
    pub fn corrupted_entries(&self) -> usize {
        self.corrupted
    }

    pub fn get(&self, key: &str) -> Option<LlmResponse> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Appends one entry as a single write of a complete line.
    pub fn put(&self, key: &str, request: &LlmRequest, response: &LlmResponse) -> Result<(), LlmError> {
        let mut stored = response.clone();
        stored.from_cache = false;
        let entry = CacheEntry {
            key: key.to_string(),
            request: request.clone(),
            response: stored.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| LlmError::Cache(e.to_string()))?;
        line.push('\n');
        {
            let mut w = self.writer.lock().unwrap();
            w.write_all(line.as_bytes())?;
            w.flush()?;
        }
        self.entries.write().unwrap().insert(key.to_string(), stored);
        Ok(())
    }
}
