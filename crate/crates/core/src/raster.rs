//! Raster primitives shared by every stage: decoded images, binary masks and
//! pixel-space boxes.

use std::fmt;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest accepted side length, in pixels, for any image entering the pipeline.
pub const MIN_SIDE: u32 = 32;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A decoded RGB image plus the identifiers backends key on.
///
/// `id` is a human-facing name (usually the file stem) and `sha256` is the
/// digest of the encoded bytes the image was decoded from.
#[derive(Clone)]
pub struct RasterImage {
    id: String,
    sha256: String,
    pixels: RgbImage,
}

impl RasterImage {
    pub fn decode(id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let id = id.into();
        let decoded =
            image::load_from_memory(bytes).map_err(|e| Error::input(format!("cannot decode image {id}: {e}")))?;
        let pixels = decoded.to_rgb8();
        check_min_side(&id, pixels.width(), pixels.height())?;
        Ok(Self {
            id,
            sha256: sha256_hex(bytes),
            pixels,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::decode(id, &bytes)
    }

    /// Wrap already-decoded pixels. The digest covers the dimensions and raw samples.
    pub fn from_rgb(id: impl Into<String>, pixels: RgbImage) -> Result<Self> {
        let id = id.into();
        check_min_side(&id, pixels.width(), pixels.height())?;
        let mut hasher = Sha256::new();
        hasher.update(pixels.width().to_le_bytes());
        hasher.update(pixels.height().to_le_bytes());
        hasher.update(pixels.as_raw());
        Ok(Self {
            id,
            sha256: hex::encode(hasher.finalize()),
            pixels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Copy of the image with every pixel outside `mask` set to black.
    pub fn masked(&self, mask: &BinaryMask) -> Result<RgbImage> {
        mask.check_dims(self.width(), self.height())?;
        let mut out = self.pixels.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            if !mask.get(x, y) {
                *px = image::Rgb([0, 0, 0]);
            }
        }
        Ok(out)
    }
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("id", &self.id)
            .field("sha256", &self.sha256)
            .field("size", &(self.width(), self.height()))
            .finish()
    }
}

fn check_min_side(id: &str, width: u32, height: u32) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::input(format!(
            "image {id} is {width}x{height}, minimum side is {MIN_SIDE}px"
        )));
    }
    Ok(())
}

/// Axis-aligned box in continuous pixel coordinates. `x_max`/`y_max` are
/// exclusive, so a mask covering columns 3..=5 has `x_min = 3, x_max = 6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_xywh(xywh: [f64; 4]) -> Self {
        Self::new(xywh[0], xywh[1], xywh[0] + xywh[2], xywh[1] + xywh[3])
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Row-major boolean raster.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::input(format!(
                "mask data has {} cells, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Filled rectangle over pixel columns `x0..x1` and rows `y0..y1`.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    /// Any non-zero luma value is foreground.
    pub fn from_luma(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().map(|p| p.0[0] > 0).collect(),
        }
    }

    pub fn to_luma(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.data[(y as usize) * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn check_dims(&self, width: u32, height: u32) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::input(format!(
                "mask is {}x{} but image is {}x{}",
                self.width, self.height, width, height
            )));
        }
        Ok(())
    }

    /// Tight box around the foreground, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        other.check_dims(self.width, self.height)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        })
    }

    pub fn intersects(&self, other: &BinaryMask) -> Result<bool> {
        other.check_dims(self.width, self.height)?;
        Ok(self.data.iter().zip(&other.data).any(|(&a, &b)| a && b))
    }

    /// Digest over the dimensions and the bit-packed contents.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        let mut packed = vec![0u8; self.data.len().div_ceil(8)];
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        hasher.update(&packed);
        hex::encode(hasher.finalize())
    }

    /// Uncompressed COCO run-length encoding (column-major, starting with a
    /// background run).
    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..self.width {
            for y in 0..self.height {
                let v = self.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            size: [self.height, self.width],
            counts,
        }
    }

    pub fn from_rle(rle: &Rle) -> Result<Self> {
        let [height, width] = rle.size;
        let mut mask = BinaryMask::new(width, height);
        let total = mask.len();
        let mut idx = 0usize;
        let mut value = false;
        for &run in &rle.counts {
            for _ in 0..run {
                if idx >= total {
                    return Err(Error::input("RLE counts exceed mask size"));
                }
                let x = (idx / height as usize) as u32;
                let y = (idx % height as usize) as u32;
                mask.set(x, y, value);
                idx += 1;
            }
            value = !value;
        }
        if idx != total {
            return Err(Error::input("RLE counts do not cover the mask"));
        }
        Ok(mask)
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("size", &(self.width, self.height))
            .field("foreground", &self.count())
            .finish()
    }
}

/// COCO uncompressed RLE: `size` is `[height, width]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bbox_is_tight_and_exclusive() {
        let m = BinaryMask::rect(10, 8, 3, 2, 6, 5);
        assert_eq!(m.bbox(), Some(BBox::new(3.0, 2.0, 6.0, 5.0)));
        assert_eq!(m.count(), 9);
        assert!(BinaryMask::new(4, 4).bbox().is_none());
    }

    #[test]
    fn iou_of_half_overlap() {
        let a = BBox::new(0.0, 0.0, 2.0, 1.0);
        let b = BBox::new(1.0, 0.0, 3.0, 1.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn rle_layout_matches_coco() {
        // 2x2 mask with only (x=1, y=0) set: column-major order is
        // (0,0) (0,1) (1,0) (1,1) -> runs [2, 1, 1]
        let mut m = BinaryMask::new(2, 2);
        m.set(1, 0, true);
        assert_eq!(m.to_rle().counts, vec![2, 1, 1]);
        assert_eq!(m.to_rle().size, [2, 2]);
    }

    #[test]
    fn small_images_are_rejected() {
        let img = RgbImage::new(31, 64);
        assert!(matches!(RasterImage::from_rgb("a", img), Err(Error::Input(_))));
    }

    #[test]
    fn masked_zeroes_outside() {
        let img = RasterImage::from_rgb("a", RgbImage::from_pixel(32, 32, image::Rgb([9, 9, 9]))).unwrap();
        let out = img.masked(&BinaryMask::rect(32, 32, 0, 0, 1, 1)).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [9, 9, 9]);
        assert_eq!(out.get_pixel(5, 5).0, [0, 0, 0]);
    }

    proptest! {
        #[test]
        fn rle_round_trips(w in 1u32..12, h in 1u32..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = BinaryMask::from_fn(w, h, |x, y| bits[(y * 12 + x) as usize]);
            prop_assert_eq!(BinaryMask::from_rle(&m.to_rle()).unwrap(), m);
        }
    }
}
