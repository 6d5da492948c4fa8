use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::request::CacheKey;

/// What is stored per key. No timestamps, so replays are byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub model: String,
    pub text: String,
    pub model_echo: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheLookup {
    Hit(CacheEntry),
    Miss,
    /// Present but unreadable; callers treat it as a miss.
    Corrupt(String),
}

/// One JSON file per key at `<root>/<key[..2]>/<key>.json`.
///
/// Entries are written to a temporary file and hard-linked into place, so
/// readers never observe a partial entry and the first writer of a key
/// wins.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[..2.min(k.len())]).join(format!("{k}.json"))
    }

    pub fn lookup(&self, key: &CacheKey) -> CacheLookup {
        if !key.is_well_formed() {
            return CacheLookup::Miss;
        }
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheLookup::Miss,
            Err(e) => return CacheLookup::Corrupt(format!("{}: {e}", path.display())),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == *key => CacheLookup::Hit(entry),
            Ok(_) => CacheLookup::Corrupt(format!("{}: key does not match file name", path.display())),
            Err(e) => CacheLookup::Corrupt(format!("{}: {e}", path.display())),
        }
    }

    /// Returns `false` when an entry for the key already existed.
    pub fn store(&self, entry: &CacheEntry) -> std::io::Result<bool> {
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut bytes = serde_json::to_vec_pretty(entry).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        let tmp = dir.join(format!(
            ".{}.{}.{:?}.tmp",
            entry.key,
            std::process::id(),
            std::thread::current().id()
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        let linked = fs::hard_link(&tmp, &path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Drops an entry, used to replace a corrupt one.
    pub fn remove(&self, key: &CacheKey) -> std::io::Result<()> {
        match fs::remove_file(self.path_for(key)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}
