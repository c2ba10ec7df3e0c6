//! Minimal blocking HTTP seam: a live client and a replay transport for tests.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// 429 and 5xx are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        self.status == 429 || self.status >= 500
    }
}

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse>;

    fn post_json(&self, url: &str, body: &serde_json::Value, bearer: Option<&str>) -> Result<HttpResponse>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("searchdet/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::Retrieval(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client })
    }

    fn finish(resp: reqwest::Result<reqwest::blocking::Response>, url: &str) -> Result<HttpResponse> {
        let resp = resp.map_err(|e| Error::Retrieval(format!("request to {url} failed: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .bytes()
            .map_err(|e| Error::Retrieval(format!("reading body from {url} failed: {e}")))?
            .to_vec();
        Ok(HttpResponse { status, body })
    }
}

impl HttpTransport for ReqwestTransport {
    fn get(&self, url: &str) -> Result<HttpResponse> {
        Self::finish(self.client.get(url).send(), url)
    }

    fn post_json(&self, url: &str, body: &serde_json::Value, bearer: Option<&str>) -> Result<HttpResponse> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        Self::finish(req.send(), url)
    }
}

/// One recorded exchange. The body is inline text or a file next to the index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedExchange {
    #[serde(default = "default_method")]
    pub method: String,
    pub url: String,
    #[serde(default = "default_status")]
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_file: Option<String>,
}

fn default_method() -> String {
    "GET".into()
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordedIndex {
    pub exchanges: Vec<RecordedExchange>,
}

/// Replays canned responses keyed by `(method, url)` and counts every call,
/// including ones it cannot answer.
#[derive(Debug, Default)]
pub struct RecordedTransport {
    responses: BTreeMap<(String, String), HttpResponse>,
    calls: AtomicUsize,
}

impl RecordedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load `<dir>/index.json`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: RecordedIndex = serde_json::from_str(&text).map_err(|e| Error::parse(&index_path, &e))?;
        let mut t = Self::new();
        for ex in index.exchanges {
            let body = match (&ex.body, &ex.body_file) {
                (_, Some(file)) => {
                    let p = dir.join(file);
                    std::fs::read(&p).map_err(|e| Error::io(&p, e))?
                }
                (Some(text), None) => text.clone().into_bytes(),
                (None, None) => Vec::new(),
            };
            t.insert(&ex.method, &ex.url, ex.status, body);
        }
        Ok(t)
    }

    pub fn insert(&mut self, method: &str, url: &str, status: u16, body: Vec<u8>) {
        self.responses.insert(
            (method.to_ascii_uppercase(), url.to_string()),
            HttpResponse { status, body },
        );
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn answer(&self, method: &str, url: &str) -> Result<HttpResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.responses
            .get(&(method.to_string(), url.to_string()))
            .cloned()
            .ok_or_else(|| Error::Retrieval(format!("no recorded response for {method} {url}")))
    }
}

impl HttpTransport for RecordedTransport {
    fn get(&self, url: &str) -> Result<HttpResponse> {
        self.answer("GET", url)
    }

    fn post_json(&self, url: &str, _body: &serde_json::Value, _bearer: Option<&str>) -> Result<HttpResponse> {
        self.answer("POST", url)
    }
}

impl<T: HttpTransport + ?Sized> HttpTransport for std::sync::Arc<T> {
    fn get(&self, url: &str) -> Result<HttpResponse> {
        (**self).get(url)
    }

    fn post_json(&self, url: &str, body: &serde_json::Value, bearer: Option<&str>) -> Result<HttpResponse> {
        (**self).post_json(url, body, bearer)
    }
}

/// Exponential backoff: attempt `k` (from 0) waits `base * 2^k` before retrying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay_ms: 0,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << attempt.min(16)))
    }

    /// Run `op` until it yields a non-retryable response or retries run out.
    /// Transport errors are retried as well.
    pub fn run(&self, mut op: impl FnMut() -> Result<HttpResponse>) -> Result<HttpResponse> {
        let mut attempt = 0;
        loop {
            let outcome = op();
            let retry = match &outcome {
                Ok(r) => r.is_retryable(),
                Err(_) => true,
            };
            if !retry || attempt >= self.max_retries {
                return outcome;
            }
            std::thread::sleep(self.delay(attempt));
            attempt += 1;
        }
    }
}
