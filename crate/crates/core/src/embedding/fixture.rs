use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_region_mask, Embedding, EmbeddingBackend, EmbeddingKind, PatchGrid};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};

/// On-disk fixture: vectors keyed by image (or region) key plus per-image
/// patch grids.
///
/// Image keys are matched against the image id first, then its sha256.
/// Region keys are `"<image key>#<mask sha256>"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub dimension: usize,
    #[serde(default)]
    pub entries: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub patch_grids: BTreeMap<String, FixtureGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureGrid {
    /// `[rows, cols]`
    pub shape: [usize; 2],
    /// `rows[r][c]` is the patch vector at row `r`, column `c`.
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl FixtureGrid {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Self {
        Self {
            shape: [rows, cols],
            rows: (0..rows).map(|r| (0..cols).map(|c| f(r, c)).collect()).collect(),
        }
    }
}

pub fn region_key(image_key: &str, mask: &BinaryMask) -> String {
    format!("{image_key}#{}", mask.sha256())
}

impl FixtureFile {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (k, v) in &self.entries {
            if v.len() != self.dimension {
                problems.push(format!(
                    "entry {k:?} has {} values, expected {}",
                    v.len(),
                    self.dimension
                ));
            }
        }
        for (k, g) in &self.patch_grids {
            if g.rows.len() != g.shape[0] || g.rows.iter().any(|r| r.len() != g.shape[1]) {
                problems.push(format!(
                    "patch grid {k:?} does not match its declared shape {:?}",
                    g.shape
                ));
            }
            if g.rows.iter().flatten().any(|v| v.len() != self.dimension) {
                problems.push(format!("patch grid {k:?} has vectors of the wrong dimension"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Deterministic lookup backend; an unknown key is an error, never a made-up vector.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    id: String,
    file: FixtureFile,
}

impl FixtureBackend {
    pub fn new(file: FixtureFile) -> Result<Self> {
        file.validate()?;
        Ok(Self {
            id: "fixture".to_string(),
            file,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FixtureFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        let mut backend = Self::new(file)?;
        backend.id = format!("fixture:{}", path.display());
        Ok(backend)
    }

    pub fn file(&self) -> &FixtureFile {
        &self.file
    }

    fn image_key<'a, T>(&self, image: &'a RasterImage, table: &BTreeMap<String, T>) -> Option<&'a str> {
        [image.id(), image.sha256()]
            .into_iter()
            .find(|k| table.contains_key(*k))
    }

    fn missing(what: &str, image: &RasterImage) -> Error {
        Error::backend(format!(
            "fixture has no {what} for image {:?} (sha256 {})",
            image.id(),
            image.sha256()
        ))
    }
}

impl EmbeddingBackend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.file.dimension
    }

    fn embed_global(&self, image: &RasterImage) -> Result<Embedding> {
        let key = self
            .image_key(image, &self.file.entries)
            .ok_or_else(|| Self::missing("global entry", image))?;
        Embedding::new(self.file.entries[key].clone(), EmbeddingKind::Global, image.id())
    }

    fn embed_patches(&self, image: &RasterImage) -> Result<PatchGrid> {
        let key = self
            .image_key(image, &self.file.patch_grids)
            .ok_or_else(|| Self::missing("patch grid", image))?;
        let g = &self.file.patch_grids[key];
        let [rows, cols] = g.shape;
        let data: Vec<f64> = g.rows.iter().flatten().flatten().copied().collect();
        let size = (image.height(), image.width());
        PatchGrid::new(
            rows,
            cols,
            self.file.dimension,
            data,
            size,
            PatchGrid::covering_stride(size, rows, cols),
        )
    }

    fn embed_masked_region(&self, image: &RasterImage, mask: &BinaryMask) -> Result<Embedding> {
        check_region_mask(image, mask)?;
        if mask.is_full() {
            let mut e = self.embed_global(image)?;
            e.kind = EmbeddingKind::Region;
            return Ok(e);
        }
        let mask_sha = mask.sha256();
        for key in [image.id(), image.sha256()] {
            let k = format!("{key}#{mask_sha}");
            if let Some(v) = self.file.entries.get(&k) {
                return Embedding::new(v.clone(), EmbeddingKind::Region, k);
            }
        }
        Err(Error::backend(format!(
            "fixture has no region entry for image {:?} and mask {mask_sha}",
            image.id()
        )))
    }
}
