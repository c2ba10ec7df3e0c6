//! COCO-format ground truth: loading, validation and writing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BBox, Rle};
use crate::retrieval::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<serde_json::Value>,
}

impl Annotation {
    pub fn bbox(&self) -> BBox {
        BBox::from_xywh(self.bbox)
    }

    pub fn is_crowd(&self) -> bool {
        self.iscrowd != 0
    }

    /// The mask when given as uncompressed RLE.
    pub fn rle(&self) -> Option<Rle> {
        serde_json::from_value(self.segmentation.clone()?).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// The document as it appears on disk. Unknown fields are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<ImageInfo>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub images: BTreeMap<u64, ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: BTreeMap<u64, Category>,
}

/// Boxes may poke out of the frame by this many pixels (rounding in exports).
const BOUNDS_SLACK: f64 = 1.0;

impl GroundTruth {
    pub fn from_file(file: CocoFile) -> Result<Self> {
        let mut problems = Vec::new();
        let mut images = BTreeMap::new();
        for img in file.images {
            if images.insert(img.id, img.clone()).is_some() {
                problems.push(format!("duplicate image id {}", img.id));
            }
        }
        let mut categories = BTreeMap::new();
        for cat in file.categories {
            if categories.insert(cat.id, cat.clone()).is_some() {
                problems.push(format!("duplicate category id {}", cat.id));
            }
        }
        for a in &file.annotations {
            let Some(img) = images.get(&a.image_id) else {
                problems.push(format!("annotation {} references missing image {}", a.id, a.image_id));
                continue;
            };
            if !categories.contains_key(&a.category_id) {
                problems.push(format!(
                    "annotation {} references missing category {}",
                    a.id, a.category_id
                ));
            }
            let [x, y, w, h] = a.bbox;
            let inside = x >= -BOUNDS_SLACK
                && y >= -BOUNDS_SLACK
                && w >= 0.0
                && h >= 0.0
                && x + w <= img.width as f64 + BOUNDS_SLACK
                && y + h <= img.height as f64 + BOUNDS_SLACK;
            if !inside || a.bbox.iter().any(|v| !v.is_finite()) {
                problems.push(format!(
                    "annotation {} bbox {:?} lies outside image {} ({}x{})",
                    a.id, a.bbox, img.id, img.width, img.height
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            images,
            annotations: file.annotations,
            categories,
        })
    }

    pub fn to_file(&self) -> CocoFile {
        CocoFile {
            images: self.images.values().cloned().collect(),
            annotations: self.annotations.clone(),
            categories: self.categories.values().cloned().collect(),
        }
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.values().find(|c| c.name == name)
    }

    /// Category ids annotated (non-crowd) on an image.
    pub fn categories_in(&self, image_id: u64) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| a.category_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    GroundTruth::from_file(file)
}

pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(&gt.to_file())?)
}
