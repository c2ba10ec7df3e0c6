//! Grid-prompted automatic mask generation over any point-promptable segmenter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RegionMask, SegmentationBackend};
use crate::error::Result;
use crate::raster::{BinaryMask, RasterImage};

/// Mask logits at full image resolution for one prompt.
#[derive(Debug, Clone)]
pub struct MaskLogits {
    pub width: u32,
    pub height: u32,
    pub logits: Vec<f32>,
    pub predicted_iou: f32,
}

impl MaskLogits {
    pub fn threshold(&self, t: f32) -> BinaryMask {
        BinaryMask::from_vec(self.width, self.height, self.logits.iter().map(|&l| l > t).collect())
            .expect("logits sized to the image")
    }

    /// Ratio of the mask areas at `t + offset` and `t - offset`.
    pub fn stability_score(&self, t: f32, offset: f32) -> f64 {
        let hi = self.logits.iter().filter(|&&l| l > t + offset).count();
        let lo = self.logits.iter().filter(|&&l| l > t - offset).count();
        if lo == 0 {
            0.0
        } else {
            hi as f64 / lo as f64
        }
    }
}

pub trait PromptableSegmenter: Send + Sync {
    type Encoded: Send + Sync;

    fn id(&self) -> &str;

    fn encode(&self, image: &RasterImage) -> Result<Self::Encoded>;

    /// Candidate masks for a single foreground point given in pixel coordinates.
    fn predict_point(&self, encoded: &Self::Encoded, x: f64, y: f64) -> Result<Vec<MaskLogits>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskGeneratorConfig {
    pub points_per_side: usize,
    pub pred_iou_thresh: f32,
    pub stability_score_thresh: f64,
    pub stability_score_offset: f32,
    pub mask_threshold: f32,
    pub box_nms_thresh: f64,
}

impl Default for MaskGeneratorConfig {
    fn default() -> Self {
        Self {
            points_per_side: 32,
            pred_iou_thresh: 0.88,
            stability_score_thresh: 0.95,
            stability_score_offset: 1.0,
            mask_threshold: 0.0,
            box_nms_thresh: 0.7,
        }
    }
}

pub struct AutomaticMaskGenerator<S> {
    segmenter: S,
    config: MaskGeneratorConfig,
    id: String,
}

impl<S: PromptableSegmenter> AutomaticMaskGenerator<S> {
    pub fn new(segmenter: S, config: MaskGeneratorConfig) -> Self {
        let id = format!("amg:{}:{}pps", segmenter.id(), config.points_per_side);
        Self { segmenter, config, id }
    }

    pub fn config(&self) -> &MaskGeneratorConfig {
        &self.config
    }

    fn grid_points(&self, width: u32, height: u32) -> Vec<(f64, f64)> {
        let n = self.config.points_per_side.max(1);
        let mut pts = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                pts.push((
                    (i as f64 + 0.5) / n as f64 * width as f64,
                    (j as f64 + 0.5) / n as f64 * height as f64,
                ));
            }
        }
        pts
    }
}

struct Scored {
    region: RegionMask,
    predicted_iou: f32,
    order: usize,
}

impl<S: PromptableSegmenter> SegmentationBackend for AutomaticMaskGenerator<S> {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(&self, image: &RasterImage) -> Result<Vec<RegionMask>> {
        let cfg = self.config;
        let encoded = self.segmenter.encode(image)?;
        let points = self.grid_points(image.width(), image.height());
        let per_point: Vec<Vec<MaskLogits>> = points
            .par_iter()
            .map(|&(x, y)| self.segmenter.predict_point(&encoded, x, y))
            .collect::<Result<_>>()?;

        let mut scored = Vec::new();
        for logits in per_point.into_iter().flatten() {
            if logits.predicted_iou < cfg.pred_iou_thresh {
                continue;
            }
            let stability = logits.stability_score(cfg.mask_threshold, cfg.stability_score_offset);
            if stability < cfg.stability_score_thresh {
                continue;
            }
            let mask = logits.threshold(cfg.mask_threshold);
            if mask.is_empty() {
                continue;
            }
            let order = scored.len();
            scored.push(Scored {
                region: RegionMask::new(mask, Some(stability))?,
                predicted_iou: logits.predicted_iou,
                order,
            });
        }

        scored.sort_by(|a, b| b.predicted_iou.total_cmp(&a.predicted_iou).then(a.order.cmp(&b.order)));
        let mut kept: Vec<RegionMask> = Vec::new();
        for s in scored {
            let b = s.region.bbox();
            if kept.iter().all(|k| k.bbox().iou(&b) <= cfg.box_nms_thresh) {
                kept.push(s.region);
            }
        }
        Ok(kept)
    }
}
