//! Turning a [`RunConfig`] into backends, a fetcher and exemplar sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use searchdet::embedding::{EmbeddingBackend, FixtureBackend};
use searchdet::regions::{FixtureSegmentation, SegmentationBackend};
use searchdet::retrieval::http::{HttpTransport, ReqwestTransport};
use searchdet::retrieval::{
    load_manifest, pin_manifest, slug, DirectoryEngine, ExemplarCache, ExemplarFetcher, ExemplarSet, FallbackTable,
    HttpLlmClient, LabelQuery, LlmClient, NegativeQueryGenerator, SearchEngine, WebImageSearch,
};
use searchdet::{Error, Result};

use crate::config::{BackendKind, RunConfig};

pub struct Backends {
    pub embedder: Box<dyn EmbeddingBackend>,
    pub segmenter: Box<dyn SegmentationBackend>,
}

impl Backends {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        match cfg.backend {
            BackendKind::Fixture => {
                let emb = cfg
                    .fixture_embeddings
                    .as_ref()
                    .ok_or_else(|| Error::Config("fixture backend needs an embedding file".into()))?;
                let masks = cfg
                    .fixture_masks
                    .as_ref()
                    .ok_or_else(|| Error::Config("fixture backend needs a mask directory".into()))?;
                Ok(Self {
                    embedder: Box::new(FixtureBackend::load(emb).map_err(|e| e.at_stage("backend"))?),
                    segmenter: Box::new(FixtureSegmentation::from_dir(masks)),
                })
            }
            BackendKind::Real => real_backends(cfg),
        }
    }
}

#[cfg(feature = "onnx")]
fn real_backends(cfg: &RunConfig) -> Result<Backends> {
    use searchdet::embedding::{CachedBackend, OnnxBackbone, OnnxBackboneConfig};
    use searchdet::regions::{AutomaticMaskGenerator, MaskGeneratorConfig, OnnxSam, OnnxSamConfig};

    let missing = |what: &str| Error::Config(format!("real backend needs {what}"));
    let model = cfg.backbone_model.as_ref().ok_or_else(|| missing("backbone_model"))?;
    let mut bb = OnnxBackboneConfig::new(model);
    bb.preprocess.input_size = cfg.backbone_input_size;
    bb.patch_size = cfg.backbone_patch_size;
    bb.register_tokens = cfg.backbone_register_tokens;
    bb.region_mode = cfg.region_mode;
    let backbone = OnnxBackbone::load(bb)?;
    let encoder = cfg.sam_encoder.as_ref().ok_or_else(|| missing("sam_encoder"))?;
    let decoder = cfg.sam_decoder.as_ref().ok_or_else(|| missing("sam_decoder"))?;
    let sam = OnnxSam::load(OnnxSamConfig::new(encoder, decoder))?;
    let amg = AutomaticMaskGenerator::new(
        sam,
        MaskGeneratorConfig {
            points_per_side: cfg.points_per_side,
            ..Default::default()
        },
    );
    let embedder: Box<dyn EmbeddingBackend> = if cfg.embedding_cache {
        Box::new(CachedBackend::new(backbone, Some(cfg.cache_dir.join("embeddings"))))
    } else {
        Box::new(backbone)
    };
    Ok(Backends {
        embedder,
        segmenter: Box::new(amg),
    })
}

#[cfg(not(feature = "onnx"))]
fn real_backends(_cfg: &RunConfig) -> Result<Backends> {
    Err(Error::Backend(
        "this build has no real backend; rebuild with `--features onnx` or use `--backend fixture`".into(),
    ))
}

pub fn exemplar_cache(cfg: &RunConfig) -> ExemplarCache {
    ExemplarCache::new(&cfg.cache_dir)
}

pub fn fetcher(cfg: &RunConfig) -> Result<ExemplarFetcher> {
    let transport: Arc<dyn HttpTransport> = Arc::new(ReqwestTransport::new(Duration::from_secs(30))?);
    let engine: Arc<dyn SearchEngine> = match (&cfg.engine_dir, &cfg.search_endpoint) {
        (Some(dir), _) => Arc::new(DirectoryEngine::new(dir)),
        (None, Some(endpoint)) => {
            let key = std::env::var("SEARCHDET_SEARCH_API_KEY")
                .map_err(|_| Error::Config("SEARCHDET_SEARCH_API_KEY is not set".into()))?;
            Arc::new(WebImageSearch::new(endpoint, key, transport.clone()))
        }
        (None, None) => Arc::new(WebImageSearch::from_env(transport.clone())?),
    };
    let llm = HttpLlmClient::from_env(&cfg.llm_model, transport).map(|c| Arc::new(c) as Arc<dyn LlmClient>);
    let table = match &cfg.negatives_table {
        Some(path) => FallbackTable::with_file(path)?,
        None => FallbackTable::default(),
    };
    let negatives = NegativeQueryGenerator::new(llm, Some(table)).with_cache_dir(cfg.cache_dir.join("negatives"));
    Ok(ExemplarFetcher::new(engine, exemplar_cache(cfg), negatives).with_negative_query_count(cfg.negative_queries))
}

/// Per-category search hints from a JSON object; `*` is the fallback entry.
pub struct ContextHints(BTreeMap<String, String>);

impl ContextHints {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self(BTreeMap::new()));
        };
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let map = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("context hints {}: {e}", path.display())))?;
        Ok(Self(map))
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.0.get(label).or_else(|| self.0.get("*")).map(String::as_str)
    }
}

/// Where a label's manifest lives inside a manifest directory.
pub fn manifest_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{}.json", slug(label)))
}

/// Exemplars for `label`: replayed from `manifest` when it exists, otherwise
/// fetched and pinned there.
pub fn exemplars_for(
    cfg: &RunConfig,
    label: &str,
    context_hint: Option<&str>,
    manifest: &Path,
    fetcher: &mut Option<ExemplarFetcher>,
) -> Result<ExemplarSet> {
    let set = if manifest.exists() {
        log::info!("replaying exemplars for {label:?} from {}", manifest.display());
        let set = load_manifest(manifest, &exemplar_cache(cfg)).map_err(|e| e.at_stage("retrieve"))?;
        if set.positives().len() < cfg.n_pos || set.negatives().len() < cfg.n_neg {
            log::warn!(
                "manifest {} pins {} positives and {} negatives; fewer than requested",
                manifest.display(),
                set.positives().len(),
                set.negatives().len()
            );
        }
        set.truncated(cfg.n_pos, cfg.n_neg)?
    } else {
        if fetcher.is_none() {
            *fetcher = Some(self::fetcher(cfg)?);
        }
        let f = fetcher.as_ref().expect("just built");
        let query = LabelQuery::new(label, context_hint)?;
        let set = f
            .fetch_exemplars(&query, cfg.n_pos, cfg.n_neg)
            .map_err(|e| e.at_stage("retrieve"))?;
        pin_manifest(&set, manifest)?;
        log::info!("pinned exemplars for {label:?} to {}", manifest.display());
        set
    };
    if set.positives().is_empty() {
        return Err(Error::EmptyResult { query: label.into() });
    }
    Ok(set)
}
