//! Content-addressed response cache. Entries are JSON files named by request
//! hash, written atomically (temp file then rename) so a crash mid-write
//! never leaves a truncated entry behind.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CachedEntry {
    Chat { text: String },
    Embedding { vector: Vec<f64> },
}

#[derive(Debug)]
pub struct PromptCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl PromptCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(PromptCache {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Unreadable or unparseable entries count as misses; the caller will
    /// recompute and overwrite them.
    pub fn get(&self, key: &str) -> Option<CachedEntry> {
        let bytes = std::fs::read(self.entry_path(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("discarding corrupt cache entry {key}: {e}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, entry: &CachedEntry) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has a shard directory");
        std::fs::create_dir_all(parent)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = parent.join(format!(
            ".tmp-{}-{}-{n}",
            &key[..8.min(key.len())],
            std::process::id()
        ));
        std::fs::write(&tmp, serde_json::to_vec(entry)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::sha_hex;

    #[test]
    fn round_trips_chat_and_embedding_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PromptCache::open(dir.path()).unwrap();
        let key = sha_hex("some request");
        assert!(cache.get(&key).is_none());
        let entry = CachedEntry::Chat {
            text: "Yes".into(),
        };
        cache.put(&key, &entry).unwrap();
        assert_eq!(cache.get(&key), Some(entry));

        let ekey = sha_hex("embed request");
        let embed = CachedEntry::Embedding {
            vector: vec![0.25, -0.5],
        };
        cache.put(&ekey, &embed).unwrap();
        assert_eq!(cache.get(&ekey), Some(embed));
    }

    #[test]
    fn corrupt_entries_are_treated_as_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PromptCache::open(dir.path()).unwrap();
        let key = sha_hex("x");
        cache
            .put(&key, &CachedEntry::Chat { text: "ok".into() })
            .unwrap();
        let path = dir.path().join(&key[..2]).join(format!("{key}.json"));
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(cache.get(&key).is_none());
    }

    #[test]
    fn no_temp_files_remain_after_writes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PromptCache::open(dir.path()).unwrap();
        for i in 0..20 {
            let key = sha_hex(format!("req {i}"));
            cache
                .put(&key, &CachedEntry::Chat { text: i.to_string() })
                .unwrap();
        }
        for entry in walk(dir.path()) {
            let name = entry.file_name().unwrap().to_string_lossy().to_string();
            assert!(!name.starts_with(".tmp-"), "leftover temp file {name}");
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out
    }
}
