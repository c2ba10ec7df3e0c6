use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RegionMask, SegmentationBackend};
use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, RasterImage};

/// `<root>/<image key>/index.json`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMaskIndex {
    pub image_key: String,
    pub masks: Vec<FixtureMaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMaskEntry {
    /// PNG path relative to the index file.
    pub path: String,
    #[serde(default)]
    pub stability_score: Option<f64>,
    /// Optional box as reported by whatever produced the mask; recomputed on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// Segmentation backend that replays masks stored on disk or in memory.
#[derive(Debug, Clone, Default)]
pub struct FixtureSegmentation {
    root: Option<PathBuf>,
    memory: BTreeMap<String, Vec<RegionMask>>,
}

impl FixtureSegmentation {
    pub fn from_dir(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            memory: BTreeMap::new(),
        }
    }

    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_key: impl Into<String>, masks: Vec<RegionMask>) {
        self.memory.insert(image_key.into(), masks);
    }

    /// Write masks for one image in the on-disk layout.
    pub fn write_image_masks(root: &Path, image_key: &str, masks: &[RegionMask]) -> Result<()> {
        let dir = root.join(image_key);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::with_capacity(masks.len());
        for (i, m) in masks.iter().enumerate() {
            let name = format!("mask_{i:03}.png");
            let path = dir.join(&name);
            m.mask().to_luma().save(&path)?;
            entries.push(FixtureMaskEntry {
                path: name,
                stability_score: m.stability_score,
                bbox: None,
            });
        }
        let index = FixtureMaskIndex {
            image_key: image_key.to_string(),
            masks: entries,
        };
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    fn load_dir(&self, root: &Path, key: &str) -> Result<Option<Vec<RegionMask>>> {
        let dir = root.join(key);
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: FixtureMaskIndex = serde_json::from_str(&text).map_err(|e| Error::parse(&index_path, &e))?;
        let mut out = Vec::with_capacity(index.masks.len());
        for entry in &index.masks {
            let path = dir.join(&entry.path);
            let img = image::open(&path)
                .map_err(|e| Error::backend(format!("cannot read mask {}: {e}", path.display())))?
                .to_luma8();
            out.push(RegionMask::from_backend(
                BinaryMask::from_luma(&img),
                entry.bbox,
                entry.stability_score,
            )?);
        }
        Ok(Some(out))
    }
}

impl SegmentationBackend for FixtureSegmentation {
    fn id(&self) -> &str {
        "fixture-masks"
    }

    fn propose(&self, image: &RasterImage) -> Result<Vec<RegionMask>> {
        for key in [image.id(), image.sha256()] {
            if let Some(m) = self.memory.get(key) {
                return Ok(m.clone());
            }
            if let Some(root) = &self.root {
                if let Some(m) = self.load_dir(root, key)? {
                    return Ok(m);
                }
            }
        }
        Err(Error::backend(format!(
            "no fixture masks registered for image {:?}",
            image.id()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn disk_round_trip_and_bbox_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let masks = vec![
            RegionMask::new(BinaryMask::rect(40, 40, 0, 0, 10, 10), Some(0.9)).unwrap(),
            RegionMask::new(BinaryMask::rect(40, 40, 20, 20, 40, 30), None).unwrap(),
            RegionMask::new(BinaryMask::rect(40, 40, 5, 30, 6, 31), Some(0.5)).unwrap(),
        ];
        FixtureSegmentation::write_image_masks(dir.path(), "scene", &masks).unwrap();

        // rewrite the index with a deliberately loose box for the first mask
        let index_path = dir.path().join("scene/index.json");
        let mut index: FixtureMaskIndex = serde_json::from_str(&std::fs::read_to_string(&index_path).unwrap()).unwrap();
        index.masks[0].bbox = Some(BBox::new(0.0, 0.0, 40.0, 40.0));
        std::fs::write(&index_path, serde_json::to_vec(&index).unwrap()).unwrap();

        let seg = FixtureSegmentation::from_dir(dir.path());
        let img = RasterImage::from_rgb("scene", RgbImage::new(40, 40)).unwrap();
        let got = seg.propose(&img).unwrap();
        assert_eq!(got, masks);
        assert_eq!(got[0].bbox(), BBox::new(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn unknown_image_and_empty_list() {
        let mut seg = FixtureSegmentation::in_memory();
        seg.insert("blank", Vec::new());
        let blank = RasterImage::from_rgb("blank", RgbImage::new(32, 32)).unwrap();
        assert!(seg.propose(&blank).unwrap().is_empty());
        let other = RasterImage::from_rgb("other", RgbImage::new(32, 32)).unwrap();
        assert!(matches!(seg.propose(&other), Err(Error::Backend(_))));
    }
}
