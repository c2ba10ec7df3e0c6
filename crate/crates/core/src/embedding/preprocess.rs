//! Pixel preprocessing for pixel-consuming backbones.

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::RegionMode;
use crate::error::Result;
use crate::raster::{BinaryMask, RasterImage};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Square side the backbone consumes.
    pub input_size: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

/// Scale so the shorter side equals `size`, then take the centered square.
pub fn resize_short_side_center_crop(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let scale = size as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(size);
    let nh = ((h as f64 * scale).round() as u32).max(size);
    let resized = imageops::resize(img, nw, nh, FilterType::Triangle);
    let x = (nw - size) / 2;
    let y = (nh - size) / 2;
    imageops::crop_imm(&resized, x, y, size, size).to_image()
}

/// Stretch the whole frame to a `size x size` square so a patch grid covers
/// every pixel.
pub fn resize_square(img: &RgbImage, size: u32) -> RgbImage {
    imageops::resize(img, size, size, FilterType::Triangle)
}

/// NCHW float tensor data (batch of one).
pub fn to_chw_normalized(img: &RgbImage, cfg: &PreprocessConfig) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0f32; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = (y * w + x) as usize;
        for c in 0..3 {
            out[c * plane + i] = (px.0[c] as f32 / 255.0 - cfg.mean[c]) / cfg.std[c];
        }
    }
    out
}

/// The image a backbone should embed for a region.
pub fn region_input(image: &RasterImage, mask: &BinaryMask, mode: RegionMode) -> Result<RgbImage> {
    let masked = image.masked(mask)?;
    match mode {
        RegionMode::ZeroFill => Ok(masked),
        RegionMode::CropPadded => {
            let bbox = mask
                .bbox()
                .ok_or_else(|| crate::error::Error::input("region mask has no foreground pixels"))?;
            let pad_x = bbox.width() * 0.1;
            let pad_y = bbox.height() * 0.1;
            let x0 = (bbox.x_min - pad_x).floor().max(0.0) as u32;
            let y0 = (bbox.y_min - pad_y).floor().max(0.0) as u32;
            let x1 = ((bbox.x_max + pad_x).ceil() as u32).min(image.width());
            let y1 = ((bbox.y_max + pad_y).ceil() as u32).min(image.height());
            Ok(imageops::crop_imm(&masked, x0, y0, x1 - x0, y1 - y0).to_image())
        }
    }
}
