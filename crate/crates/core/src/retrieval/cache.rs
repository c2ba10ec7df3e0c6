//! Content-addressed exemplar cache.
//!
//! Layout: `<root>/<sha256(query)>/<rank>_<sha256(bytes)>.<ext>` plus one
//! `manifest.json` per query directory. Every file is written to a temporary
//! name first and renamed into place.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ManifestEntry;
use crate::error::{Error, Result};
use crate::raster::sha256_hex;

/// What one query directory holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    pub engine: String,
    pub fetched_at: String,
    /// How many images the fetch asked for.
    pub requested: usize,
    /// The engine had no more usable results than `entries`.
    pub exhausted: bool,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct ExemplarCache {
    root: PathBuf,
}

pub const CACHE_ENV: &str = "SEARCHDET_CACHE_DIR";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.{:?}.tmp",
        std::process::id(),
        std::thread::current().id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl ExemplarCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `SEARCHDET_CACHE_DIR` if set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) => Self::new(dir),
            None => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn query_key(query: &str) -> String {
        sha256_hex(query.as_bytes())
    }

    pub fn query_dir(&self, query: &str) -> PathBuf {
        self.root.join(Self::query_key(query))
    }

    pub fn read_query(&self, query: &str) -> Result<Option<QueryRecord>> {
        let path = self.query_dir(query).join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let record: QueryRecord = serde_json::from_str(&text).map_err(|e| Error::parse(&path, &e))?;
        Ok(Some(record))
    }

    pub fn write_query(&self, record: &QueryRecord) -> Result<()> {
        let path = self.query_dir(&record.query).join("manifest.json");
        write_atomic(&path, &serde_json::to_vec_pretty(record)?)
    }

    /// Store image bytes and return their path relative to the cache root.
    pub fn store_image(&self, query: &str, rank: usize, bytes: &[u8]) -> Result<(String, String)> {
        let sha = sha256_hex(bytes);
        let ext = image::guess_format(bytes)
            .ok()
            .and_then(|f| f.extensions_str().first().copied())
            .unwrap_or("img");
        let relative = format!("{}/{rank}_{sha}.{ext}", Self::query_key(query));
        let path = self.root.join(&relative);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok((relative, sha))
    }

    /// Read a cached image and check it still hashes to what the entry says.
    pub fn read_image(&self, entry: &ManifestEntry) -> Result<Vec<u8>> {
        let path = self.root.join(&entry.relative_path);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.content_sha256 {
            return Err(Error::Integrity {
                path,
                expected: entry.content_sha256.clone(),
                actual,
            });
        }
        Ok(bytes)
    }

    /// Every readable query record, sorted by query text.
    pub fn list(&self) -> Result<Vec<QueryRecord>> {
        let mut out = Vec::new();
        let Ok(dir) = std::fs::read_dir(&self.root) else {
            return Ok(out);
        };
        for entry in dir.flatten() {
            let path = entry.path().join("manifest.json");
            if let Ok(text) = std::fs::read_to_string(&path) {
                match serde_json::from_str::<QueryRecord>(&text) {
                    Ok(r) => out.push(r),
                    Err(e) => log::warn!("skipping unreadable cache record {}: {e}", path.display()),
                }
            }
        }
        out.sort_by(|a, b| a.query.cmp(&b.query));
        Ok(out)
    }

    /// Remove every query directory; returns how many were removed.
    pub fn clear(&self) -> Result<usize> {
        let Ok(dir) = std::fs::read_dir(&self.root) else {
            return Ok(0);
        };
        let mut n = 0;
        for entry in dir.flatten() {
            let p = entry.path();
            if p.is_dir() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                n += 1;
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExemplarCache::new(dir.path());
        let (rel, sha) = cache.store_image("q", 2, b"not an image").unwrap();
        assert_eq!(rel, format!("{}/2_{sha}.img", ExemplarCache::query_key("q")));
        let entry = ManifestEntry {
            rank: 2,
            source_url: "u".into(),
            content_sha256: sha,
            relative_path: rel.clone(),
        };
        assert_eq!(cache.read_image(&entry).unwrap(), b"not an image");
        std::fs::write(dir.path().join(&rel), b"tampered").unwrap();
        assert!(matches!(cache.read_image(&entry), Err(Error::Integrity { .. })));
    }

    #[test]
    fn list_and_clear() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExemplarCache::new(dir.path());
        for q in ["b", "a"] {
            cache
                .write_query(&QueryRecord {
                    query: q.into(),
                    engine: "e".into(),
                    fetched_at: "t".into(),
                    requested: 1,
                    exhausted: true,
                    entries: vec![],
                })
                .unwrap();
        }
        let names: Vec<String> = cache.list().unwrap().into_iter().map(|r| r.query).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(cache.clear().unwrap(), 2);
        assert!(cache.list().unwrap().is_empty());
    }
}
