//! Negative query strings: concepts that co-occur with a label but are not it.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::http::{HttpTransport, RetryPolicy};
use crate::error::{Error, Result};
use crate::raster::sha256_hex;

pub trait LlmClient: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String>;
}

/// OpenAI-style chat-completions client.
pub struct HttpLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            transport,
            retry: RetryPolicy::default(),
        }
    }

    /// `SEARCHDET_LLM_ENDPOINT`, with an optional `SEARCHDET_LLM_API_KEY`.
    pub fn from_env(model: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Option<Self> {
        let endpoint = std::env::var("SEARCHDET_LLM_ENDPOINT").ok()?;
        let mut client = Self::new(endpoint, model, transport);
        client.api_key = std::env::var("SEARCHDET_LLM_API_KEY").ok();
        Some(client)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl LlmClient for HttpLlmClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .retry
            .run(|| self.transport.post_json(&self.endpoint, &body, self.api_key.as_deref()))?;
        let raw = String::from_utf8_lossy(&resp.body).into_owned();
        if !resp.is_success() {
            return Err(Error::Retrieval(format!(
                "LLM endpoint returned HTTP {}: {raw}",
                resp.status
            )));
        }
        let v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Error::Format {
            message: format!("LLM response is not JSON: {e}"),
            raw: raw.clone(),
        })?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Format {
                message: "LLM response has no choices[0].message.content".into(),
                raw,
            })
    }
}

pub fn negative_prompt(label: &str, count: usize) -> String {
    format!(
        "List {count} visual concept(s) that often appear in photos together with the given object \
but are not the object itself. Answer with a comma-separated list of short noun phrases and nothing else.\n\
Object: surfboard\nAnswer: waves\n\
Object: fork\nAnswer: food\n\
Object: {label}\nAnswer:"
    )
}

/// Split a free-form answer into candidate phrases.
pub fn parse_negative_response(raw: &str) -> Vec<String> {
    raw.split([',', '\n', ';'])
        .map(|s| {
            s.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | '•'))
                .trim()
                .trim_start_matches("Answer:")
                .trim()
                .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.'))
                .trim()
                .to_string()
        })
        .filter(|s| !s.is_empty() && s.len() <= 64)
        .collect()
}

fn builtin_table() -> BTreeMap<String, Vec<String>> {
    let pairs: &[(&str, &[&str])] = &[
        ("surfboard", &["waves", "beach", "ocean"]),
        ("fork", &["food", "plate", "dining table"]),
        ("knife", &["cutting board", "food"]),
        ("spoon", &["bowl", "soup"]),
        ("cup", &["saucer", "table"]),
        ("wine glass", &["wine bottle", "dining table"]),
        ("tennis racket", &["tennis court", "tennis ball"]),
        ("baseball bat", &["baseball field", "baseball glove"]),
        ("baseball glove", &["baseball field"]),
        ("skis", &["snow", "ski slope"]),
        ("snowboard", &["snow", "ski slope"]),
        ("kite", &["sky", "beach"]),
        ("frisbee", &["grass", "park"]),
        ("boat", &["water", "harbor"]),
        ("airplane", &["sky", "runway"]),
        ("train", &["railway tracks", "station platform"]),
        ("car", &["road", "parking lot"]),
        ("bicycle", &["road", "bike rack"]),
        ("toothbrush", &["sink", "toothpaste"]),
        ("toilet", &["bathroom tiles", "sink"]),
        ("keyboard", &["computer monitor", "desk"]),
        ("mouse", &["keyboard", "mouse pad"]),
        ("remote", &["couch", "television"]),
        ("bed", &["pillow", "bedroom"]),
        ("horse", &["fence", "pasture"]),
        ("cow", &["pasture", "grass"]),
        ("sheep", &["pasture", "grass"]),
        ("giraffe", &["savanna", "trees"]),
        ("zebra", &["savanna", "grass"]),
        ("elephant", &["savanna", "dirt"]),
        ("umbrella", &["rain", "street"]),
        ("traffic light", &["street", "sky"]),
        ("stop sign", &["street", "pole"]),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

const GENERIC_NEGATIVES: &[&str] = &[
    "background scenery",
    "indoor room",
    "outdoor landscape",
    "people",
    "texture",
];

/// Static label-to-negatives table used when no LLM is configured or it fails.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl Default for FallbackTable {
    fn default() -> Self {
        Self {
            entries: builtin_table(),
        }
    }
}

impl FallbackTable {
    /// Built-ins overlaid with a JSON object `{label: [negatives]}`.
    pub fn with_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let extra: BTreeMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        let mut table = Self::default();
        for (k, v) in extra {
            table.entries.insert(k.trim().to_lowercase(), v);
        }
        Ok(table)
    }

    pub fn lookup(&self, label: &str) -> Vec<String> {
        let key = label.trim().to_lowercase();
        let mut out: Vec<String> = self.entries.get(&key).cloned().unwrap_or_default();
        out.extend(GENERIC_NEGATIVES.iter().map(|s| s.to_string()));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedAnswer {
    model: String,
    label: String,
    raw: String,
    queries: Vec<String>,
}

/// Negative query generation with a response cache keyed by `(model id, label)`.
pub struct NegativeQueryGenerator {
    llm: Option<Arc<dyn LlmClient>>,
    fallback: Option<FallbackTable>,
    cache_dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, CachedAnswer>>,
}

impl NegativeQueryGenerator {
    pub fn new(llm: Option<Arc<dyn LlmClient>>, fallback: Option<FallbackTable>) -> Self {
        Self {
            llm,
            fallback,
            cache_dir: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    /// Fallback table only.
    pub fn offline() -> Self {
        Self::new(None, Some(FallbackTable::default()))
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn id(&self) -> String {
        match &self.llm {
            Some(l) => format!("llm:{}", l.model_id()),
            None => "fallback-table".into(),
        }
    }

    fn cache_key(model: &str, label: &str) -> String {
        sha256_hex(format!("{model}\n{}", label.trim().to_lowercase()).as_bytes())
    }

    fn cached(&self, key: &str) -> Option<CachedAnswer> {
        if let Some(a) = self.memory.lock().unwrap().get(key) {
            return Some(a.clone());
        }
        let path = self.cache_dir.as_ref()?.join(format!("{key}.json"));
        let a: CachedAnswer = serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()?;
        self.memory.lock().unwrap().insert(key.to_string(), a.clone());
        Some(a)
    }

    fn remember(&self, key: &str, answer: &CachedAnswer) -> Result<()> {
        self.memory.lock().unwrap().insert(key.to_string(), answer.clone());
        if let Some(dir) = &self.cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{key}.json"));
            let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
            std::fs::write(&tmp, serde_json::to_vec_pretty(answer)?).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Ask the LLM (or its cache) for candidate phrases.
    fn ask_llm(&self, llm: &dyn LlmClient, label: &str, count: usize) -> Result<(String, Vec<String>)> {
        let key = Self::cache_key(llm.model_id(), label);
        if let Some(a) = self.cached(&key) {
            if distinct_negatives(label, &a.queries, count).len() >= count {
                return Ok((a.raw, a.queries));
            }
        }
        let raw = llm.complete(&negative_prompt(label, count))?;
        let queries = parse_negative_response(&raw);
        if distinct_negatives(label, &queries, 1).is_empty() {
            return Err(Error::Format {
                message: format!("no usable negative queries for {label:?} in LLM output"),
                raw,
            });
        }
        self.remember(
            &key,
            &CachedAnswer {
                model: llm.model_id().to_string(),
                label: label.to_string(),
                raw: raw.clone(),
                queries: queries.clone(),
            },
        )?;
        Ok((raw, queries))
    }

    pub fn generate(&self, label: &str, count: usize) -> Result<Vec<String>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::input("label is empty"));
        }
        let mut candidates = Vec::new();
        let mut raw_answer = None;
        if let Some(llm) = &self.llm {
            match self.ask_llm(llm.as_ref(), label, count) {
                Ok((raw, qs)) => {
                    candidates = qs;
                    raw_answer = Some(raw);
                }
                Err(e @ Error::Format { .. }) if self.fallback.is_none() => return Err(e),
                Err(e) if self.fallback.is_none() => {
                    return Err(Error::Retrieval(format!("negative query generation failed: {e}")))
                }
                Err(e) => log::warn!("LLM negative query generation failed ({e}); using the fallback table"),
            }
        } else if self.fallback.is_none() {
            return Err(Error::Retrieval(
                "no LLM client configured and the fallback table is disabled".into(),
            ));
        }
        if let Some(table) = &self.fallback {
            candidates.extend(table.lookup(label));
        }
        let out = distinct_negatives(label, &candidates, count);
        if out.len() < count {
            return Err(Error::Format {
                message: format!("only {} of {count} negative queries available for {label:?}", out.len()),
                raw: raw_answer.unwrap_or_default(),
            });
        }
        Ok(out)
    }
}

/// First `count` case-insensitively distinct phrases that differ from `label`.
fn distinct_negatives(label: &str, candidates: &[String], count: usize) -> Vec<String> {
    let label = label.trim().to_lowercase();
    let mut seen = vec![label];
    let mut out = Vec::new();
    for c in candidates {
        let c = c.trim();
        let key = c.to_lowercase();
        if c.is_empty() || seen.contains(&key) {
            continue;
        }
        seen.push(key);
        out.push(c.to_string());
        if out.len() == count {
            break;
        }
    }
    out
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn label_never_comes_back(
            label in "[a-z]{1,6}",
            words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..12),
            count in 1usize..8,
        ) {
            // sprinkle case and whitespace variants of the label among the candidates
            let mut candidates = words.clone();
            candidates.insert(0, label.to_uppercase());
            candidates.push(format!("  {label} "));
            let out = distinct_negatives(&label, &candidates, count);
            prop_assert!(out.len() <= count);
            prop_assert!(out.iter().all(|q| !q.trim().eq_ignore_ascii_case(&label)));
            let mut keys: Vec<String> = out.iter().map(|q| q.to_lowercase()).collect();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), out.len());
        }
    }
}
