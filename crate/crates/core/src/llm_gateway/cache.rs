use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ChatRequest;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
    pub backend_id: String,
    pub attempt_count: u32,
}

/// Append-only store of one JSON record per request key, sharded by the
/// first two hex digits. Existing records are never rewritten.
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        let path = self.path_for(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheRecord>(&bytes) {
            Ok(record) if record.key == key => Some(record),
            Ok(_) | Err(_) => {
                log::warn!("ignoring corrupt cache record {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, record: &CacheRecord) -> io::Result<()> {
        let path = self.path_for(&record.key);
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{}.tmp", record.key));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(record).map_err(io::Error::other)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }

    pub fn len(&self) -> usize {
        walk_json(&self.dir)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(Result::ok)
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_json(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}
