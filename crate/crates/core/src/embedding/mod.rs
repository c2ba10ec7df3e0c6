//! Vision backbone abstraction: global, patch-grid and masked-region embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};
use crate::vector::{all_finite, mean};

mod cache;
mod fixture;
#[cfg(feature = "onnx")]
mod onnx;
pub mod preprocess;

pub use cache::CachedBackend;
pub use fixture::{region_key, FixtureBackend, FixtureFile, FixtureGrid};
#[cfg(feature = "onnx")]
pub use onnx::{OnnxBackbone, OnnxBackboneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Global,
    Patch,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub kind: EmbeddingKind,
    pub source_id: String,
}

impl Embedding {
    pub fn new(values: Vec<f64>, kind: EmbeddingKind, source_id: impl Into<String>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::backend("embedding contains non-finite values"));
        }
        Ok(Self {
            values,
            kind,
            source_id: source_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `rows x cols` grid of `dim`-vectors laid over an image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
    /// `(height, width)` of the image the grid covers.
    pub image_size: (u32, u32),
    pub patch_stride: u32,
}

impl PatchGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        data: Vec<f64>,
        image_size: (u32, u32),
        patch_stride: u32,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::domain("patch grid must be non-empty"));
        }
        if data.len() != rows * cols * dim {
            return Err(Error::backend(format!(
                "patch grid data has {} values, expected {rows}x{cols}x{dim}",
                data.len()
            )));
        }
        if !all_finite(&data) {
            return Err(Error::backend("patch grid contains non-finite values"));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            data,
            image_size,
            patch_stride,
        })
    }

    /// Smallest stride whose grid covers the image.
    pub fn covering_stride(image_size: (u32, u32), rows: usize, cols: usize) -> u32 {
        let (h, w) = image_size;
        (h as usize).div_ceil(rows).max((w as usize).div_ceil(cols)).max(1) as u32
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Average over all patch vectors.
    pub fn mean(&self) -> Vec<f64> {
        let v: Vec<&[f64]> = self.vectors().collect();
        mean(&v).expect("grid is non-empty by construction")
    }
}

/// How the masked-region input is formed before the backbone sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    /// Zero every pixel outside the mask, keep the full frame.
    #[default]
    ZeroFill,
    /// Zero outside the mask, then crop to the mask box grown by 10% per side.
    CropPadded,
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed_global(&self, image: &RasterImage) -> Result<Embedding>;

    fn embed_patches(&self, image: &RasterImage) -> Result<PatchGrid>;

    fn embed_masked_region(&self, image: &RasterImage, mask: &BinaryMask) -> Result<Embedding>;
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_global(&self, image: &RasterImage) -> Result<Embedding> {
        (**self).embed_global(image)
    }

    fn embed_patches(&self, image: &RasterImage) -> Result<PatchGrid> {
        (**self).embed_patches(image)
    }

    fn embed_masked_region(&self, image: &RasterImage, mask: &BinaryMask) -> Result<Embedding> {
        (**self).embed_masked_region(image, mask)
    }
}

/// Precondition shared by every backend's region path.
pub fn check_region_mask(image: &RasterImage, mask: &BinaryMask) -> Result<()> {
    mask.check_dims(image.width(), image.height())?;
    if mask.is_empty() {
        return Err(Error::input("region mask has no foreground pixels"));
    }
    Ok(())
}
