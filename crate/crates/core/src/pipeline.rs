//! End-to-end detection for one label on one image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::grounding::{ground, Detection, GroundingParams};
use crate::heatmap::{binarize, compute_heatmap, heatmap_query, Heatmap, Upsampling};
use crate::query::{build_query_bundle, PoolingMode, QueryBundle};
use crate::raster::RasterImage;
use crate::regions::{embed_regions, propose_regions, ProposalFilter, SegmentationBackend};
use crate::retrieval::ExemplarSet;
use crate::selection::{select_masks, SelectionParams, SelectionTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub pooling: PoolingMode,
    pub use_negatives: bool,
    pub use_heatmap: bool,
    pub heatmap_quantile: f64,
    pub upsampling: Upsampling,
    pub selection: SelectionParams,
    pub grounding: GroundingParams,
    pub proposals: ProposalFilter,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            pooling: PoolingMode::Attention,
            use_negatives: true,
            use_heatmap: true,
            heatmap_quantile: 0.85,
            upsampling: Upsampling::Bilinear,
            selection: SelectionParams::default(),
            grounding: GroundingParams::default(),
            proposals: ProposalFilter::default(),
        }
    }
}

/// Exemplar embeddings for one label, computed once and reused per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedExemplars {
    pub label: String,
    pub positive_globals: Vec<Vec<f64>>,
    pub negative_globals: Vec<Vec<f64>>,
    pub positive_patch_means: Vec<Vec<f64>>,
    pub negative_patch_means: Vec<Vec<f64>>,
}

impl PreparedExemplars {
    /// First `n_pos` positives and `n_neg` negatives.
    pub fn truncated(&self, n_pos: usize, n_neg: usize) -> Self {
        Self {
            label: self.label.clone(),
            positive_globals: self.positive_globals.iter().take(n_pos).cloned().collect(),
            negative_globals: self.negative_globals.iter().take(n_neg).cloned().collect(),
            positive_patch_means: self.positive_patch_means.iter().take(n_pos).cloned().collect(),
            negative_patch_means: self.negative_patch_means.iter().take(n_neg).cloned().collect(),
        }
    }
}

/// Global embeddings and patch means, one per image.
type ExemplarVectors = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn embed_exemplars(images: &[&RasterImage], backend: &dyn EmbeddingBackend) -> Result<ExemplarVectors> {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = images
        .par_iter()
        .map(|img| {
            let global = backend.embed_global(img)?.values;
            let patches = backend.embed_patches(img)?.mean();
            Ok((global, patches))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

pub fn prepare_images(
    label: &str,
    positives: &[&RasterImage],
    negatives: &[&RasterImage],
    backend: &dyn EmbeddingBackend,
) -> Result<PreparedExemplars> {
    if positives.is_empty() {
        return Err(Error::EmptyResult { query: label.into() });
    }
    let (positive_globals, positive_patch_means) = embed_exemplars(positives, backend)?;
    let (negative_globals, negative_patch_means) = embed_exemplars(negatives, backend)?;
    Ok(PreparedExemplars {
        label: label.to_string(),
        positive_globals,
        negative_globals,
        positive_patch_means,
        negative_patch_means,
    })
}

pub fn prepare_exemplars(set: &ExemplarSet, backend: &dyn EmbeddingBackend) -> Result<PreparedExemplars> {
    let pos: Vec<&RasterImage> = set.positives().iter().map(|e| &e.image).collect();
    let neg: Vec<&RasterImage> = set.negatives().iter().map(|e| &e.image).collect();
    prepare_images(set.label(), &pos, &neg, backend).map_err(|e| e.at_stage("embed"))
}

/// Everything one detection run produced; intermediate pieces are kept for
/// debug dumps and overlays.
#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub detections: Vec<Detection>,
    pub bundle: QueryBundle,
    pub region_count: usize,
    pub selection: Option<SelectionTrace>,
    pub heatmap: Option<Heatmap>,
}

pub fn detect(
    image: &RasterImage,
    exemplars: &PreparedExemplars,
    embedder: &dyn EmbeddingBackend,
    segmenter: &dyn SegmentationBackend,
    params: &PipelineParams,
) -> Result<DetectionOutput> {
    let no_negatives: [Vec<f64>; 0] = [];
    let (neg_globals, neg_means): (&[Vec<f64>], &[Vec<f64>]) = if params.use_negatives {
        (&exemplars.negative_globals, &exemplars.negative_patch_means)
    } else {
        (&no_negatives, &no_negatives)
    };

    let input = embedder.embed_global(image).map_err(|e| e.at_stage("embed"))?;
    let bundle = build_query_bundle(&input.values, &exemplars.positive_globals, neg_globals, params.pooling)
        .map_err(|e| e.at_stage("query"))?;

    let regions = propose_regions(segmenter, image, &params.proposals).map_err(|e| e.at_stage("regions"))?;
    if regions.is_empty() {
        return Ok(DetectionOutput {
            detections: Vec::new(),
            bundle,
            region_count: 0,
            selection: None,
            heatmap: None,
        });
    }
    let embedded = embed_regions(image, &regions, embedder).map_err(|e| e.at_stage("regions"))?;

    let region_vectors: Vec<&[f64]> = embedded.iter().map(|r| r.embedding.values.as_slice()).collect();
    let trace = select_masks(&bundle.exemplar_vectors(), &region_vectors, &params.selection)
        .map_err(|e| e.at_stage("select"))?;
    let verified: Vec<_> = trace.result.verified.iter().map(|&j| embedded[j].clone()).collect();

    let heatmap = if params.use_heatmap {
        let hm = (|| {
            let grid = embedder.embed_patches(image)?;
            let query = heatmap_query(&grid, &exemplars.positive_patch_means, neg_means, params.pooling)?;
            let values = compute_heatmap(&grid, &query.vector, image.width(), image.height(), params.upsampling)?;
            binarize(values, params.heatmap_quantile)
        })()
        .map_err(|e| e.at_stage("heatmap"))?;
        Some(hm)
    } else {
        None
    };

    let detections = ground(
        &verified,
        heatmap.as_ref(),
        &bundle.pooled.vector,
        &exemplars.label,
        &params.grounding,
    )
    .map_err(|e| e.at_stage("ground"))?;

    Ok(DetectionOutput {
        detections,
        bundle,
        region_count: embedded.len(),
        selection: Some(trace),
        heatmap,
    })
}
