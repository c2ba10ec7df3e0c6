//! Class-agnostic region proposals and their masked-region embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingBackend};
use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, RasterImage};

mod amg;
mod fixture;
#[cfg(feature = "onnx")]
mod onnx;

pub use amg::{AutomaticMaskGenerator, MaskGeneratorConfig, MaskLogits, PromptableSegmenter};
pub use fixture::{FixtureMaskEntry, FixtureMaskIndex, FixtureSegmentation};
#[cfg(feature = "onnx")]
pub use onnx::{OnnxSam, OnnxSamConfig, SamEncoding};

/// One proposal. `bbox` and `area` are always derived from `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    mask: BinaryMask,
    bbox: BBox,
    area: usize,
    pub stability_score: Option<f64>,
}

impl RegionMask {
    pub fn new(mask: BinaryMask, stability_score: Option<f64>) -> Result<Self> {
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::input("region mask has no foreground pixels"))?;
        let area = mask.count();
        Ok(Self {
            mask,
            bbox,
            area,
            stability_score,
        })
    }

    /// Accept a backend's mask together with whatever box it reported; the box
    /// is discarded in favour of the tight one.
    pub fn from_backend(mask: BinaryMask, reported: Option<BBox>, stability_score: Option<f64>) -> Result<Self> {
        let region = Self::new(mask, stability_score)?;
        if let Some(b) = reported {
            if b != region.bbox {
                log::debug!("replacing reported bbox {b:?} with tight bbox {:?}", region.bbox);
            }
        }
        Ok(region)
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.area
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedRegion {
    pub region: RegionMask,
    pub embedding: Embedding,
}

pub trait SegmentationBackend: Send + Sync {
    fn id(&self) -> &str;

    fn propose(&self, image: &RasterImage) -> Result<Vec<RegionMask>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalFilter {
    /// Minimum mask area as a fraction of the image.
    pub min_area_fraction: f64,
    pub max_regions: usize,
}

impl Default for ProposalFilter {
    fn default() -> Self {
        Self {
            min_area_fraction: 0.0005,
            max_regions: 100,
        }
    }
}

impl ProposalFilter {
    /// Drop slivers, then keep the `max_regions` best by (area, stability)
    /// while preserving the backend's order.
    pub fn apply(&self, image_pixels: usize, regions: Vec<RegionMask>) -> Vec<RegionMask> {
        let min_area = self.min_area_fraction * image_pixels as f64;
        let kept: Vec<RegionMask> = regions.into_iter().filter(|r| r.area() as f64 >= min_area).collect();
        if kept.len() <= self.max_regions {
            return kept;
        }
        let mut ranked: Vec<usize> = (0..kept.len()).collect();
        ranked.sort_by(|&a, &b| {
            let (ra, rb) = (&kept[a], &kept[b]);
            rb.area()
                .cmp(&ra.area())
                .then(
                    rb.stability_score
                        .unwrap_or(f64::NEG_INFINITY)
                        .total_cmp(&ra.stability_score.unwrap_or(f64::NEG_INFINITY)),
                )
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; kept.len()];
        for &i in ranked.iter().take(self.max_regions) {
            keep[i] = true;
        }
        kept.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect()
    }
}

pub fn propose_regions(
    backend: &dyn SegmentationBackend,
    image: &RasterImage,
    filter: &ProposalFilter,
) -> Result<Vec<RegionMask>> {
    let regions = backend.propose(image)?;
    for r in &regions {
        r.mask().check_dims(image.width(), image.height())?;
    }
    let pixels = (image.width() as usize) * (image.height() as usize);
    Ok(filter.apply(pixels, regions))
}

/// One embedding per region, in input order.
pub fn embed_regions(
    image: &RasterImage,
    regions: &[RegionMask],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<EmbeddedRegion>> {
    regions
        .par_iter()
        .map(|r| {
            backend
                .embed_masked_region(image, r.mask())
                .map(|embedding| EmbeddedRegion {
                    region: r.clone(),
                    embedding,
                })
        })
        .collect()
}
