//! Fuse verified regions with the binarized heatmap into scored detections.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::query::cosine_similarity;
use crate::raster::{BBox, BinaryMask, Rle};
use crate::regions::EmbeddedRegion;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub score: f64,
}

impl Detection {
    pub fn record(&self) -> DetectionRecord {
        DetectionRecord {
            label: self.label.clone(),
            bbox: self.bbox,
            score: self.score,
            area: self.mask.count(),
            segmentation: self.mask.to_rle(),
        }
    }

    pub fn coco_result(&self, image_id: u64, category_id: u64) -> CocoResult {
        CocoResult {
            image_id,
            category_id,
            bbox: self.bbox.to_xywh(),
            score: self.score,
            segmentation: Some(self.mask.to_rle()),
        }
    }
}

/// Serializable form of a [`Detection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub label: String,
    pub bbox: BBox,
    pub score: f64,
    pub area: usize,
    pub segmentation: Rle,
}

/// One entry of a COCO results file. `bbox` is `[x, y, w, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Rle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    pub dedupe_iou: f64,
}

impl Default for GroundingParams {
    fn default() -> Self {
        Self { dedupe_iou: 0.9 }
    }
}

/// Cosine similarity mapped affinely onto `[0, 1]`.
pub fn detection_score(region: &[f64], query: &[f64]) -> Result<f64> {
    Ok(((cosine_similarity(region, query)? + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Highest score first; ties fall back to box coordinates so the order never
/// depends on input order.
fn by_score(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
}

/// Greedy suppression: walk by descending score and drop anything whose box
/// overlaps an already kept one by more than `iou`.
pub fn dedupe(mut detections: Vec<Detection>, iou: f64) -> Vec<Detection> {
    detections.sort_by(by_score);
    let mut kept: Vec<Detection> = Vec::with_capacity(detections.len());
    for d in detections {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= iou) {
            kept.push(d);
        }
    }
    kept
}

/// One detection per region whose mask touches the binarized heatmap (every
/// region when `heatmap` is `None`). Boxes come from the whole region mask.
pub fn ground(
    regions: &[EmbeddedRegion],
    heatmap: Option<&Heatmap>,
    query: &[f64],
    label: &str,
    params: &GroundingParams,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for r in regions {
        let mask = r.region.mask();
        if let Some(hm) = heatmap {
            if mask.width() != hm.binary.width() || mask.height() != hm.binary.height() {
                return Err(Error::domain(format!(
                    "region mask is {}x{} but the heatmap is {}x{}",
                    mask.width(),
                    mask.height(),
                    hm.binary.width(),
                    hm.binary.height()
                )));
            }
            if !mask.intersects(&hm.binary)? {
                continue;
            }
        }
        out.push(Detection {
            label: label.to_string(),
            bbox: r.region.bbox(),
            mask: mask.clone(),
            score: detection_score(&r.embedding.values, query)?,
        });
    }
    Ok(dedupe(out, params.dedupe_iou))
}
