//! Positive and negative exemplar retrieval with a reproducible on-disk cache.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{sha256_hex, RasterImage};

mod cache;
mod engine;
pub mod http;
mod negatives;

pub use cache::{write_atomic, ExemplarCache, QueryRecord, CACHE_ENV};
pub use engine::{slug, DirectoryEngine, SearchEngine, SearchHit, WebImageSearch, DEFAULT_SEARCH_ENDPOINT};
pub use negatives::{
    negative_prompt, parse_negative_response, FallbackTable, HttpLlmClient, LlmClient, NegativeQueryGenerator,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelQuery {
    label: String,
    context_hint: Option<String>,
}

impl LabelQuery {
    pub fn new(label: &str, context_hint: Option<&str>) -> Result<Self> {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::input("label is empty"));
        }
        Ok(Self {
            label: label.to_string(),
            context_hint: context_hint
                .map(str::trim)
                .filter(|h| !h.is_empty())
                .map(str::to_string),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn context_hint(&self) -> Option<&str> {
        self.context_hint.as_deref()
    }

    /// The text sent to the search engine.
    pub fn search_text(&self) -> String {
        match &self.context_hint {
            Some(h) => format!("{} {h}", self.label),
            None => self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rank: usize,
    pub source_url: String,
    pub content_sha256: String,
    /// Relative to the cache root.
    pub relative_path: String,
}

/// Provenance of one exemplar set; enough to rebuild it from the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub context_hint: Option<String>,
    pub engine: String,
    /// RFC 3339.
    pub fetched_at: String,
    pub negative_queries: Vec<String>,
    pub positives: Vec<ManifestEntry>,
    pub negatives: Vec<ManifestEntry>,
}

impl Manifest {
    /// Digest of the canonical JSON encoding.
    pub fn sha256(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }
}

#[derive(Debug, Clone)]
pub struct ExemplarImage {
    pub entry: ManifestEntry,
    pub image: RasterImage,
}

/// Exemplars for one label. Immutable once built.
#[derive(Debug, Clone)]
pub struct ExemplarSet {
    manifest: Manifest,
    positives: Vec<ExemplarImage>,
    negatives: Vec<ExemplarImage>,
}

impl PartialEq for ExemplarSet {
    fn eq(&self, other: &Self) -> bool {
        let pixels = |v: &[ExemplarImage]| -> Vec<String> { v.iter().map(|e| e.image.sha256().to_string()).collect() };
        self.manifest == other.manifest
            && pixels(&self.positives) == pixels(&other.positives)
            && pixels(&self.negatives) == pixels(&other.negatives)
    }
}

impl ExemplarSet {
    pub fn new(manifest: Manifest, positives: Vec<ExemplarImage>, negatives: Vec<ExemplarImage>) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::EmptyResult {
                query: manifest.label.clone(),
            });
        }
        for list in [&positives, &negatives] {
            let mut seen = std::collections::HashSet::new();
            for e in list.iter() {
                if !seen.insert(e.entry.content_sha256.as_str()) {
                    return Err(Error::input(format!(
                        "duplicate exemplar {} in set for {:?}",
                        e.entry.content_sha256, manifest.label
                    )));
                }
            }
        }
        Ok(Self {
            manifest,
            positives,
            negatives,
        })
    }

    pub fn label(&self) -> &str {
        &self.manifest.label
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn negative_queries(&self) -> &[String] {
        &self.manifest.negative_queries
    }

    pub fn positives(&self) -> &[ExemplarImage] {
        &self.positives
    }

    pub fn negatives(&self) -> &[ExemplarImage] {
        &self.negatives
    }

    /// Keep the first `n_pos` positives and `n_neg` negatives.
    pub fn truncated(&self, n_pos: usize, n_neg: usize) -> Result<Self> {
        let mut manifest = self.manifest.clone();
        manifest.positives.truncate(n_pos);
        manifest.negatives.truncate(n_neg);
        Self::new(
            manifest,
            self.positives.iter().take(n_pos).cloned().collect(),
            self.negatives.iter().take(n_neg).cloned().collect(),
        )
    }
}

fn image_id(entry: &ManifestEntry) -> String {
    Path::new(&entry.relative_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| entry.content_sha256.clone())
}

fn load_entries(cache: &ExemplarCache, entries: &[ManifestEntry]) -> Result<Vec<ExemplarImage>> {
    entries
        .iter()
        .map(|entry| {
            let bytes = cache.read_image(entry)?;
            Ok(ExemplarImage {
                image: RasterImage::decode(image_id(entry), &bytes)?,
                entry: entry.clone(),
            })
        })
        .collect()
}

/// Write the set's manifest as JSON.
pub fn pin_manifest(set: &ExemplarSet, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(set.manifest())?)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

/// Rebuild a pinned set from the cache without searching.
pub fn load_manifest(path: &Path, cache: &ExemplarCache) -> Result<ExemplarSet> {
    let manifest = read_manifest(path)?;
    load_from_manifest(manifest, cache)
}

pub fn load_from_manifest(manifest: Manifest, cache: &ExemplarCache) -> Result<ExemplarSet> {
    let positives = load_entries(cache, &manifest.positives)?;
    let negatives = load_entries(cache, &manifest.negatives)?;
    ExemplarSet::new(manifest, positives, negatives)
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub struct ExemplarFetcher {
    engine: Arc<dyn SearchEngine>,
    cache: ExemplarCache,
    negatives: NegativeQueryGenerator,
    workers: usize,
    negative_query_count: usize,
}

impl ExemplarFetcher {
    pub fn new(engine: Arc<dyn SearchEngine>, cache: ExemplarCache, negatives: NegativeQueryGenerator) -> Self {
        Self {
            engine,
            cache,
            negatives,
            workers: 4,
            negative_query_count: 1,
        }
    }

    /// Concurrent downloads per query.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_negative_query_count(mut self, count: usize) -> Self {
        self.negative_query_count = count;
        self
    }

    pub fn cache(&self) -> &ExemplarCache {
        &self.cache
    }

    pub fn engine_id(&self) -> &str {
        self.engine.id()
    }

    fn download(&self, hits: &[SearchHit]) -> Result<Vec<Option<Vec<u8>>>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Retrieval(format!("cannot start download pool: {e}")))?;
        Ok(pool.install(|| {
            hits.par_iter()
                .map(|hit| match self.engine.fetch(hit) {
                    Ok(bytes) => Some(bytes),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", hit.url);
                        None
                    }
                })
                .collect()
        }))
    }

    /// Up to `n` decodable, distinct images for one query string, cached.
    pub fn fetch_query(&self, query: &str, n: usize) -> Result<(QueryRecord, Vec<ExemplarImage>)> {
        if let Some(record) = self.cache.read_query(query)? {
            if record.engine == self.engine.id() && (record.entries.len() >= n || record.exhausted) {
                let entries: Vec<ManifestEntry> = record.entries.iter().take(n).cloned().collect();
                let images = load_entries(&self.cache, &entries)?;
                return Ok((record, images));
            }
        }
        if n == 0 {
            return Ok((
                QueryRecord {
                    query: query.to_string(),
                    engine: self.engine.id().to_string(),
                    fetched_at: now_rfc3339(),
                    requested: 0,
                    exhausted: false,
                    entries: Vec::new(),
                },
                Vec::new(),
            ));
        }
        // ask for spares so failed downloads and duplicates can be replaced
        let limit = n * 2 + 2;
        let hits = self.engine.search(query, limit)?;
        let bodies = self.download(&hits)?;
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::new();
        let mut images = Vec::new();
        for (hit, body) in hits.iter().zip(bodies) {
            if images.len() == n {
                break;
            }
            let Some(bytes) = body else { continue };
            let sha = sha256_hex(&bytes);
            if !seen.insert(sha.clone()) {
                log::debug!("dropping duplicate {}", hit.url);
                continue;
            }
            if let Err(e) = RasterImage::decode(&hit.url, &bytes) {
                log::warn!("skipping {}: {e}", hit.url);
                continue;
            }
            let (relative_path, content_sha256) = self.cache.store_image(query, hit.rank, &bytes)?;
            let entry = ManifestEntry {
                rank: hit.rank,
                source_url: hit.url.clone(),
                content_sha256,
                relative_path,
            };
            images.push(ExemplarImage {
                image: RasterImage::decode(image_id(&entry), &bytes)?,
                entry: entry.clone(),
            });
            entries.push(entry);
        }
        let record = QueryRecord {
            query: query.to_string(),
            engine: self.engine.id().to_string(),
            fetched_at: now_rfc3339(),
            requested: n,
            exhausted: images.len() < n,
            entries,
        };
        self.cache.write_query(&record)?;
        Ok((record, images))
    }

    pub fn fetch_exemplars(&self, query: &LabelQuery, n_pos: usize, n_neg: usize) -> Result<ExemplarSet> {
        if n_pos == 0 {
            return Err(Error::Config("at least one positive exemplar is required".into()));
        }
        let (record, positives) = self.fetch_query(&query.search_text(), n_pos)?;
        if positives.is_empty() {
            return Err(Error::EmptyResult {
                query: query.search_text(),
            });
        }
        let negative_queries = if n_neg > 0 {
            self.negatives.generate(query.label(), self.negative_query_count)?
        } else {
            Vec::new()
        };
        let mut per_query = Vec::new();
        for nq in &negative_queries {
            let text = match query.context_hint() {
                Some(h) => format!("{nq} {h}"),
                None => nq.clone(),
            };
            per_query.push(self.fetch_query(&text, n_neg)?.1);
        }
        let negatives = round_robin(per_query, n_neg);
        let manifest = Manifest {
            label: query.label().to_string(),
            context_hint: query.context_hint().map(str::to_string),
            engine: self.engine.id().to_string(),
            fetched_at: record.fetched_at,
            negative_queries,
            positives: positives.iter().map(|e| e.entry.clone()).collect(),
            negatives: negatives.iter().map(|e| e.entry.clone()).collect(),
        };
        ExemplarSet::new(manifest, positives, negatives)
    }
}

/// Interleave per-query result lists, skipping repeated content, up to `limit`.
fn round_robin(lists: Vec<Vec<ExemplarImage>>, limit: usize) -> Vec<ExemplarImage> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let depth = lists.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for i in 0..depth {
        for list in &lists {
            if out.len() == limit {
                break 'outer;
            }
            if let Some(e) = list.get(i) {
                if seen.insert(e.entry.content_sha256.clone()) {
                    out.push(e.clone());
                }
            }
        }
    }
    out
}
