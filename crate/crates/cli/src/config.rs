//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use searchdet::raster::sha256_hex;
use serde::{Deserialize, Serialize};

use searchdet::embedding::RegionMode;
use searchdet::eval::LabelsPerImage;
use searchdet::grounding::GroundingParams;
use searchdet::heatmap::Upsampling;
use searchdet::pipeline::PipelineParams;
use searchdet::query::PoolingMode;
use searchdet::regions::ProposalFilter;
use searchdet::retrieval::CACHE_ENV;
use searchdet::selection::{CandidateMean, DistanceMode, SelectionParams};
use searchdet::Error;

pub const MAX_EXEMPLARS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// ONNX backbone and segmenter.
    #[default]
    Real,
    /// Precomputed embeddings and masks read from files.
    Fixture,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Real => "real",
            BackendKind::Fixture => "fixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub fixture_embeddings: Option<PathBuf>,
    pub fixture_masks: Option<PathBuf>,
    pub backbone_model: Option<PathBuf>,
    pub backbone_input_size: u32,
    pub backbone_patch_size: u32,
    pub backbone_register_tokens: usize,
    pub sam_encoder: Option<PathBuf>,
    pub sam_decoder: Option<PathBuf>,
    pub points_per_side: usize,
    pub region_mode: RegionMode,
    pub embedding_cache: bool,

    pub n_pos: usize,
    pub n_neg: usize,
    pub negative_queries: usize,
    pub pooling: PoolingMode,
    pub use_negatives: bool,
    pub use_heatmap: bool,
    pub heatmap_quantile: f64,
    pub upsampling: Upsampling,
    pub dominance: f64,
    pub sigma_mult: f64,
    pub distance: DistanceMode,
    pub candidate_mean: CandidateMean,
    pub dedupe_iou: f64,
    pub min_area_fraction: f64,
    pub max_regions: usize,

    pub cache_dir: PathBuf,
    pub engine_dir: Option<PathBuf>,
    pub search_endpoint: Option<String>,
    pub llm_model: String,
    pub negatives_table: Option<PathBuf>,

    pub workers: usize,
    pub labels_per_image: LabelsPerImage,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineParams::default();
        let proposals = ProposalFilter::default();
        Self {
            backend: BackendKind::Real,
            fixture_embeddings: None,
            fixture_masks: None,
            backbone_model: None,
            backbone_input_size: 224,
            backbone_patch_size: 14,
            backbone_register_tokens: 0,
            sam_encoder: None,
            sam_decoder: None,
            points_per_side: 32,
            region_mode: RegionMode::ZeroFill,
            embedding_cache: true,
            n_pos: 5,
            n_neg: 5,
            negative_queries: 1,
            pooling: pipeline.pooling,
            use_negatives: pipeline.use_negatives,
            use_heatmap: pipeline.use_heatmap,
            heatmap_quantile: pipeline.heatmap_quantile,
            upsampling: pipeline.upsampling,
            dominance: pipeline.selection.dominance,
            sigma_mult: pipeline.selection.sigma_mult,
            distance: pipeline.selection.distance,
            candidate_mean: pipeline.selection.candidate_mean,
            dedupe_iou: pipeline.grounding.dedupe_iou,
            min_area_fraction: proposals.min_area_fraction,
            max_regions: proposals.max_regions,
            cache_dir: std::env::var_os(CACHE_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(".searchdet-cache")),
            engine_dir: None,
            search_endpoint: None,
            llm_model: "gpt-4o-mini".into(),
            negatives_table: None,
            workers: 0,
            labels_per_image: LabelsPerImage::All,
            seed: 0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parse a TOML document; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, Error> {
        let table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let explicit_cache = table.contains_key("cache_dir");
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.fixture_embeddings,
            &mut cfg.fixture_masks,
            &mut cfg.backbone_model,
            &mut cfg.sam_encoder,
            &mut cfg.sam_decoder,
            &mut cfg.engine_dir,
            &mut cfg.negatives_table,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        if explicit_cache {
            resolve(&mut cfg.cache_dir);
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut problems = Vec::new();
        if !(self.heatmap_quantile > 0.0 && self.heatmap_quantile < 1.0) {
            problems.push(format!("heatmap quantile {} is outside (0, 1)", self.heatmap_quantile));
        }
        if !(self.dominance > 0.0 && self.dominance <= 1.0) {
            problems.push(format!("dominance {} is outside (0, 1]", self.dominance));
        }
        if !(self.sigma_mult > 0.0 && self.sigma_mult.is_finite()) {
            problems.push(format!("sigma multiplier {} must be positive", self.sigma_mult));
        }
        if !(self.dedupe_iou > 0.0 && self.dedupe_iou <= 1.0) {
            problems.push(format!("dedupe IoU {} is outside (0, 1]", self.dedupe_iou));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            problems.push(format!(
                "minimum area fraction {} is outside [0, 1)",
                self.min_area_fraction
            ));
        }
        if !(1..=MAX_EXEMPLARS).contains(&self.n_pos) {
            problems.push(format!("n_pos {} is outside 1..={MAX_EXEMPLARS}", self.n_pos));
        }
        if self.n_neg > MAX_EXEMPLARS {
            problems.push(format!("n_neg {} exceeds {MAX_EXEMPLARS}", self.n_neg));
        }
        if self.max_regions == 0 {
            problems.push("max_regions must be at least 1".into());
        }
        if self.n_neg > 0 && self.negative_queries == 0 {
            problems.push("negative_queries must be at least 1 when n_neg > 0".into());
        }
        if self.backend == BackendKind::Fixture {
            if self.fixture_embeddings.is_none() {
                problems.push("fixture backend needs fixture_embeddings (--embeddings)".into());
            }
            if self.fixture_masks.is_none() {
                problems.push("fixture backend needs fixture_masks (--masks)".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_err(problems.join("; ")))
        }
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&bytes)
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            pooling: self.pooling,
            use_negatives: self.use_negatives,
            use_heatmap: self.use_heatmap,
            heatmap_quantile: self.heatmap_quantile,
            upsampling: self.upsampling,
            selection: SelectionParams {
                dominance: self.dominance,
                sigma_mult: self.sigma_mult,
                distance: self.distance,
                candidate_mean: self.candidate_mean,
            },
            grounding: GroundingParams {
                dedupe_iou: self.dedupe_iou,
            },
            proposals: ProposalFilter {
                min_area_fraction: self.min_area_fraction,
                max_regions: self.max_regions,
            },
        }
    }
}

/// Flags shared by every subcommand that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with run configuration fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Fixture embedding file (fixture backend).
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Fixture mask directory (fixture backend).
    #[arg(long, value_name = "DIR")]
    pub masks: Option<PathBuf>,
    /// Offline search engine: one folder of images per query.
    #[arg(long, value_name = "DIR")]
    pub engine_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_pos: Option<usize>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub no_negatives: bool,
    #[arg(long, value_parser = ["attention", "mean"])]
    pub pooling: Option<String>,
    #[arg(long)]
    pub no_heatmap: bool,
    #[arg(long)]
    pub heatmap_quantile: Option<f64>,
    #[arg(long)]
    pub dominance: Option<f64>,
    #[arg(long)]
    pub sigma_mult: Option<f64>,
    #[arg(long, value_parser = ["normalized", "raw"])]
    pub distance: Option<String>,
    #[arg(long)]
    pub dedupe_iou: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-image work (0 = one per core).
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ConfigArgs {
    /// Defaults, overlaid by the config file, overlaid by flags; then validated.
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(p) = &self.embeddings {
            cfg.fixture_embeddings = Some(p.clone());
        }
        if let Some(p) = &self.masks {
            cfg.fixture_masks = Some(p.clone());
        }
        if let Some(p) = &self.engine_dir {
            cfg.engine_dir = Some(p.clone());
        }
        if let Some(n) = self.n_pos {
            cfg.n_pos = n;
        }
        if let Some(n) = self.n_neg {
            cfg.n_neg = n;
        }
        if self.no_negatives {
            cfg.use_negatives = false;
        }
        if let Some(p) = &self.pooling {
            cfg.pooling = p.parse()?;
        }
        if self.no_heatmap {
            cfg.use_heatmap = false;
        }
        if let Some(q) = self.heatmap_quantile {
            cfg.heatmap_quantile = q;
        }
        if let Some(d) = self.dominance {
            cfg.dominance = d;
        }
        if let Some(s) = self.sigma_mult {
            cfg.sigma_mult = s;
        }
        if let Some(d) = &self.distance {
            cfg.distance = d.parse()?;
        }
        if let Some(i) = self.dedupe_iou {
            cfg.dedupe_iou = i;
        }
        if let Some(p) = &self.cache_dir {
            cfg.cache_dir = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_once_backend_is_real() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.pipeline_params(), PipelineParams::default());
    }

    #[test]
    fn range_checks() {
        for (q, d, s) in [
            (0.0, 0.8, 3.0),
            (1.0, 0.8, 3.0),
            (0.85, 0.0, 3.0),
            (0.85, 1.2, 3.0),
            (0.85, 0.8, 0.0),
        ] {
            let cfg = RunConfig {
                heatmap_quantile: q,
                dominance: d,
                sigma_mult: s,
                ..Default::default()
            };
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{q} {d} {s}");
        }
        let edge = RunConfig {
            dominance: 1.0,
            ..Default::default()
        };
        edge.validate().unwrap();
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "heatmap_quantile = 0.7\ndominance = 0.9\nfixture_embeddings = \"emb.json\"\n",
        )
        .unwrap();
        let args = ConfigArgs {
            config: Some(path),
            dominance: Some(0.95),
            no_heatmap: true,
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.heatmap_quantile, 0.7);
        assert_eq!(cfg.dominance, 0.95);
        assert!(!cfg.use_heatmap);
        assert_eq!(cfg.sigma_mult, 3.0);
        assert_eq!(cfg.fixture_embeddings, Some(dir.path().join("emb.json")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("dominanse = 0.9", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
