//! Append-only JSONL response cache.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::TemplateId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub template_id: TemplateId,
    pub model_name: String,
    pub response: String,
    pub timestamp: u64,
}

pub(crate) fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, thiserror::Error)]
#[error("cache file {path} has {bad} unreadable line(s)")]
pub struct CacheCorruptionError {
    pub path: PathBuf,
    pub bad: usize,
}

struct Inner {
    map: HashMap<String, String>,
    file: File,
}

pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn read_entries(path: &Path) -> std::io::Result<(Vec<CacheEntry>, Result<(), CacheCorruptionError>)> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), Ok(()))),
        Err(e) => return Err(e),
    };
    let mut good = Vec::new();
    let mut bad = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<CacheEntry>(line) {
            Ok(e) => good.push(e),
            Err(_) => bad += 1,
        }
    }
    let status = if bad == 0 { Ok(()) } else { Err(CacheCorruptionError { path: path.to_path_buf(), bad }) };
    Ok((good, status))
}

impl ResponseCache {
    /// Opens (or creates) the cache. Unreadable lines are dropped and the file
    /// is rewritten atomically with the surviving entries.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let (entries, status) = read_entries(path)?;
        if let Err(err) = status {
            tracing::warn!(%err, "rebuilding response cache");
            let tmp = path.with_extension("jsonl.tmp");
            let mut body = String::new();
            for e in &entries {
                body.push_str(&serde_json::to_string(e).expect("entry serializes"));
                body.push('\n');
            }
            fs::write(&tmp, body)?;
            fs::rename(&tmp, path)?;
        }
        let map = entries.into_iter().map(|e| (e.key, e.response)).collect();
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), inner: Mutex::new(Inner { map, file }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().map.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, entry: CacheEntry) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        inner.file.write_all(line.as_bytes())?;
        inner.file.flush()?;
        inner.map.insert(entry.key, entry.response);
        Ok(())
    }

    /// Checks the file on disk without modifying it.
    pub fn verify(path: &Path) -> Result<usize, CacheCorruptionError> {
        match read_entries(path) {
            Ok((entries, status)) => status.map(|_| entries.len()),
            Err(_) => Err(CacheCorruptionError { path: path.to_path_buf(), bad: 0 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_lines_are_dropped_and_file_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = CacheEntry {
            key: "k".into(),
            template_id: TemplateId::TpQuery,
            model_name: "m".into(),
            response: "r".into(),
            timestamp: 1,
        };
        fs::write(&path, format!("{}\n{{not json\n", serde_json::to_string(&good).unwrap())).unwrap();
        assert!(ResponseCache::verify(&path).is_err());
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.get("k").as_deref(), Some("r"));
        assert_eq!(ResponseCache::verify(&path).unwrap(), 1);
    }
}
