//! Image search engines: a live web image search and an offline directory.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::http::{HttpTransport, RetryPolicy};
use crate::error::{Error, Result};

/// One search result, `rank` counted from 0 in engine order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub rank: usize,
    pub url: String,
}

pub trait SearchEngine: Send + Sync {
    fn id(&self) -> &str;

    /// Up to `limit` hits in engine rank order.
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>>;

    fn fetch(&self, hit: &SearchHit) -> Result<Vec<u8>>;
}

/// Lowercased, alphanumerics kept, every other run collapsed to `_`.
pub fn slug(query: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for ch in query.trim().chars() {
        if ch.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('_');
            }
            gap = false;
            out.extend(ch.to_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "gif", "bmp", "webp", "tif", "tiff"];

/// Offline engine: `<root>/<query>/` (or `<root>/<slug(query)>/`) holds the
/// results, ranked by file name.
#[derive(Debug, Clone)]
pub struct DirectoryEngine {
    root: PathBuf,
    id: String,
}

impl DirectoryEngine {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let id = format!("directory:{}", root.display());
        Self { root, id }
    }

    fn query_dir(&self, query: &str) -> Option<PathBuf> {
        [self.root.join(query.trim()), self.root.join(slug(query))]
            .into_iter()
            .find(|p| p.is_dir())
    }
}

impl SearchEngine for DirectoryEngine {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>> {
        let Some(dir) = self.query_dir(query) else {
            log::info!("directory engine has no folder for {query:?}");
            return Ok(Vec::new());
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        Ok(files
            .into_iter()
            .take(limit)
            .enumerate()
            .map(|(rank, p)| SearchHit {
                rank,
                url: format!("file://{}", p.display()),
            })
            .collect())
    }

    fn fetch(&self, hit: &SearchHit) -> Result<Vec<u8>> {
        let path = hit
            .url
            .strip_prefix("file://")
            .map(Path::new)
            .ok_or_else(|| Error::Retrieval(format!("directory engine cannot fetch {}", hit.url)))?;
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct ImagesResponse {
    #[serde(default)]
    images_results: Vec<ImageResult>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct ImageResult {
    #[serde(default)]
    original: Option<String>,
    #[serde(default)]
    thumbnail: Option<String>,
}

/// Web image search speaking the common `google_images` JSON API
/// (`images_results[].original`), e.g. SerpAPI.
pub struct WebImageSearch {
    endpoint: String,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    min_interval: Duration,
    last_query: Mutex<Option<Instant>>,
    id: String,
}

pub const DEFAULT_SEARCH_ENDPOINT: &str = "https://serpapi.com/search.json";

impl WebImageSearch {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        let endpoint = endpoint.into();
        let id = format!("web:{endpoint}");
        Self {
            endpoint,
            api_key: api_key.into(),
            transport,
            retry: RetryPolicy::default(),
            min_interval: Duration::ZERO,
            last_query: Mutex::new(None),
            id,
        }
    }

    /// Build from `SEARCHDET_SEARCH_API_KEY`.
    pub fn from_env(transport: Arc<dyn HttpTransport>) -> Result<Self> {
        let key = std::env::var("SEARCHDET_SEARCH_API_KEY")
            .map_err(|_| Error::Config("SEARCHDET_SEARCH_API_KEY is not set".into()))?;
        Ok(Self::new(DEFAULT_SEARCH_ENDPOINT, key, transport))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// At most one search request per `interval`.
    pub fn with_rate_limit(mut self, interval: Duration) -> Self {
        self.min_interval = interval;
        self
    }

    pub fn search_url(&self, query: &str) -> Result<String> {
        let url = reqwest::Url::parse_with_params(
            &self.endpoint,
            &[("engine", "google_images"), ("q", query), ("api_key", &self.api_key)],
        )
        .map_err(|e| Error::Config(format!("bad search endpoint {:?}: {e}", self.endpoint)))?;
        Ok(url.to_string())
    }

    fn throttle(&self) {
        let mut last = self.last_query.lock().unwrap();
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl SearchEngine for WebImageSearch {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>> {
        let url = self.search_url(query)?;
        self.throttle();
        let resp = self.retry.run(|| self.transport.get(&url))?;
        if !resp.is_success() {
            return Err(Error::Retrieval(format!(
                "image search for {query:?} returned HTTP {}",
                resp.status
            )));
        }
        let parsed: ImagesResponse = serde_json::from_slice(&resp.body).map_err(|e| Error::Format {
            message: format!("image search response for {query:?} is not valid JSON: {e}"),
            raw: String::from_utf8_lossy(&resp.body).into_owned(),
        })?;
        if let Some(err) = parsed.error {
            if parsed.images_results.is_empty() {
                log::warn!("image search for {query:?} reported: {err}");
            }
        }
        Ok(parsed
            .images_results
            .into_iter()
            .filter_map(|r| r.original.or(r.thumbnail))
            .take(limit)
            .enumerate()
            .map(|(rank, url)| SearchHit { rank, url })
            .collect())
    }

    fn fetch(&self, hit: &SearchHit) -> Result<Vec<u8>> {
        let resp = self.retry.run(|| self.transport.get(&hit.url))?;
        if !resp.is_success() {
            return Err(Error::Retrieval(format!(
                "download of {} returned HTTP {}",
                hit.url, resp.status
            )));
        }
        Ok(resp.body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::http::RecordedTransport;

    #[test]
    fn slugs() {
        assert_eq!(slug("Tennis Racket"), "tennis_racket");
        assert_eq!(slug("  hot-dog!! "), "hot_dog");
    }

    #[test]
    fn directory_engine_ranks_by_name_and_falls_back_to_slug() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("tennis_racket");
        std::fs::create_dir(&q).unwrap();
        for name in ["b.png", "a.jpg", "notes.txt"] {
            std::fs::write(q.join(name), name).unwrap();
        }
        let engine = DirectoryEngine::new(dir.path());
        let hits = engine.search("Tennis Racket", 10).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits[0].url.ends_with("a.jpg"));
        assert_eq!(engine.fetch(&hits[1]).unwrap(), b"b.png");
        assert!(engine.search("missing", 5).unwrap().is_empty());
    }

    #[test]
    fn web_search_parses_results() {
        let mut t = RecordedTransport::new();
        let engine_url = {
            let e = WebImageSearch::new("http://search.test/s", "k", Arc::new(RecordedTransport::new()));
            e.search_url("red fork").unwrap()
        };
        assert_eq!(
            engine_url,
            "http://search.test/s?engine=google_images&q=red+fork&api_key=k"
        );
        t.insert(
            "GET",
            &engine_url,
            200,
            br#"{"images_results":[{"original":"http://img/1"},{"thumbnail":"http://img/2"},{}]}"#.to_vec(),
        );
        t.insert("GET", "http://img/1", 404, vec![]);
        let engine = WebImageSearch::new("http://search.test/s", "k", Arc::new(t)).with_retry(RetryPolicy::none());
        let hits = engine.search("red fork", 5).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.url.as_str()).collect::<Vec<_>>(),
            ["http://img/1", "http://img/2"]
        );
        assert!(engine.fetch(&hits[0]).is_err());
    }
}
