use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// One line of the cache store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request_digest: String,
    pub response: String,
    pub timestamp: u64,
}

/// Append-only response store keyed by request hash.
///
/// Reads go through an in-memory index; writes are appended to
/// `responses.jsonl` under a single writer lock.
#[derive(Debug)]
pub struct ResponseCache {
    index: RwLock<HashMap<String, String>>,
    writer: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

pub const CACHE_FILE: &str = "responses.jsonl";

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            index: RwLock::new(HashMap::new()),
            writer: None,
            path: None,
        }
    }

    /// Opens (or creates) the store in `dir`, loading existing records.
    /// Unparseable lines, such as a torn final write, are skipped.
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut index = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        index.entry(r.key).or_insert(r.response);
                    }
                    Err(e) => tracing::warn!(error = %e, "skipping malformed cache line"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let len = file.metadata()?.len();
        if len > 0 {
            let bytes = std::fs::read(&path)?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
        }
        Ok(ResponseCache {
            index: RwLock::new(index),
            writer: Some(Mutex::new(file)),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a response. The first response stored under a key wins.
    pub fn put(&self, key: &str, request_digest: &str, response: &str) -> io::Result<()> {
        {
            let mut index = self.index.write().expect("cache index poisoned");
            if index.contains_key(key) {
                return Ok(());
            }
            index.insert(key.to_string(), response.to_string());
        }
        if let Some(writer) = &self.writer {
            let record = CacheRecord {
                key: key.to_string(),
                request_digest: request_digest.to_string(),
                response: response.to_string(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
            line.push('\n');
            let mut f = writer.lock().expect("cache writer poisoned");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = ResponseCache::open(dir.path()).unwrap();
            c.put("k1", "planner:m", "f_group_by(A)").unwrap();
            c.put("k1", "planner:m", "ignored").unwrap();
        }
        let c = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(c.get("k1").as_deref(), Some("f_group_by(A)"));
        assert_eq!(c.len(), 1);
        let text = std::fs::read_to_string(dir.path().join(CACHE_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn torn_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(CACHE_FILE),
            "{\"key\":\"a\",\"request_digest\":\"d\",\"response\":\"r\",\"timestamp\":1}\n{\"key\":",
        )
        .unwrap();
        let c = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(c.get("a").as_deref(), Some("r"));
    }
}
