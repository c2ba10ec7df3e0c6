//! Patch-similarity heatmaps and their binarization.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::embedding::PatchGrid;
use crate::error::{Error, Result};
use crate::query::{adjusted_query, cosine_similarity, AdjustedQuery, PoolingMode};
use crate::raster::{BinaryMask, RasterImage};
use crate::vector::{check_dim, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsampling {
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Upsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Upsampling::Bilinear),
            "nearest" => Ok(Upsampling::Nearest),
            other => Err(Error::Config(format!("unknown upsampling mode {other:?}"))),
        }
    }
}

/// Row-major `height x width` real raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapValues {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl HeatmapValues {
    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::domain("heatmap data does not match its dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("heatmap contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    /// First pixel (row-major) holding the maximum.
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        ((best as u32) % self.width, (best as u32) / self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: HeatmapValues,
    pub binary: BinaryMask,
    pub threshold: f64,
}

/// Mean patch vector of every exemplar grid, positives and negatives apart.
pub fn exemplar_pooled_embeddings(
    positive_grids: &[PatchGrid],
    negative_grids: &[PatchGrid],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (
        positive_grids.iter().map(PatchGrid::mean).collect(),
        negative_grids.iter().map(PatchGrid::mean).collect(),
    )
}

/// The heatmap query: exemplar mean-patch embeddings pooled against the input
/// image's own mean-patch embedding, negatives subtracted.
pub fn heatmap_query<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    input_grid: &PatchGrid,
    positive_means: &[P],
    negative_means: &[N],
    mode: PoolingMode,
) -> Result<AdjustedQuery> {
    adjusted_query(&input_grid.mean(), positive_means, negative_means, mode)
}

/// Cosine similarity of every patch with `query`, row-major. A zero patch
/// vector scores 0.
pub fn patch_similarities(grid: &PatchGrid, query: &[f64]) -> Result<Vec<f64>> {
    check_dim(grid.dim(), query.len())?;
    if norm(query) == 0.0 {
        return Err(Error::domain("heatmap query is the zero vector"));
    }
    grid.vectors()
        .map(|p| {
            if norm(p) == 0.0 {
                Ok(0.0)
            } else {
                cosine_similarity(p, query)
            }
        })
        .collect()
}

/// Continuous grid coordinate of pixel `x` when `cells` cells span `extent` pixels.
fn grid_coord(x: u32, extent: u32, cells: usize) -> f64 {
    let step = extent as f64 / cells as f64;
    ((x as f64 + 0.5) / step - 0.5).clamp(0.0, (cells - 1) as f64)
}

pub fn upsample(cells: &[f64], rows: usize, cols: usize, width: u32, height: u32, mode: Upsampling) -> Vec<f64> {
    let at = |r: usize, c: usize| cells[r * cols + c];
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        let v = grid_coord(y, height, rows);
        for x in 0..width {
            let u = grid_coord(x, width, cols);
            let value = match mode {
                Upsampling::Nearest => {
                    let r = ((y as usize * rows) / height as usize).min(rows - 1);
                    let c = ((x as usize * cols) / width as usize).min(cols - 1);
                    at(r, c)
                }
                Upsampling::Bilinear => {
                    let (r0, c0) = (v.floor() as usize, u.floor() as usize);
                    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
                    let (tv, tu) = (v - r0 as f64, u - c0 as f64);
                    let top = at(r0, c0) * (1.0 - tu) + at(r0, c1) * tu;
                    let bottom = at(r1, c0) * (1.0 - tu) + at(r1, c1) * tu;
                    top * (1.0 - tv) + bottom * tv
                }
            };
            out.push(value.clamp(-1.0, 1.0));
        }
    }
    out
}

/// Per-patch cosine similarity upsampled to `width x height`.
pub fn compute_heatmap(
    input_grid: &PatchGrid,
    query: &[f64],
    width: u32,
    height: u32,
    mode: Upsampling,
) -> Result<HeatmapValues> {
    if (width as usize) < input_grid.cols() || (height as usize) < input_grid.rows() {
        return Err(Error::domain(format!(
            "heatmap size {width}x{height} is smaller than the {}x{} patch grid",
            input_grid.cols(),
            input_grid.rows()
        )));
    }
    let cells = patch_similarities(input_grid, query)?;
    let data = upsample(&cells, input_grid.rows(), input_grid.cols(), width, height, mode);
    HeatmapValues::from_vec(width, height, data)
}

/// Nearest-rank `quantile` of the values: the smallest value with at least a
/// `quantile` share of the map at or below it.
pub fn quantile_threshold(values: &[f64], quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::domain(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    if values.is_empty() {
        return Err(Error::domain("cannot threshold an empty heatmap"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // tolerate representation error in quantile * n
    let rank = (quantile * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn binarize(values: HeatmapValues, quantile: f64) -> Result<Heatmap> {
    let threshold = quantile_threshold(&values.data, quantile)?;
    let binary = BinaryMask::from_vec(
        values.width,
        values.height,
        values.data.iter().map(|&v| v >= threshold).collect(),
    )?;
    Ok(Heatmap {
        values,
        binary,
        threshold,
    })
}

fn ramp(t: f64) -> Rgb<u8> {
    // blue -> cyan -> yellow -> red
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 1.0 / 3.0 {
        let s = t * 3.0;
        (0.0, s, 1.0)
    } else if t < 2.0 / 3.0 {
        let s = t * 3.0 - 1.0;
        (s, 1.0, 1.0 - s)
    } else {
        let s = t * 3.0 - 2.0;
        (1.0, 1.0 - s, 0.0)
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// The image blended with the min-max scaled heatmap; binarized pixels are
/// drawn at full map opacity.
pub fn overlay(image: &RasterImage, heatmap: &Heatmap, alpha: f64) -> Result<RgbImage> {
    let (w, h) = (image.width(), image.height());
    if heatmap.values.width != w || heatmap.values.height != h {
        return Err(Error::domain("heatmap and image sizes differ"));
    }
    let data = heatmap.values.as_slice();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = image.pixels().clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let color = ramp((heatmap.values.get(x, y) - lo) / span);
        let a = if heatmap.binary.get(x, y) {
            alpha.max(0.75)
        } else {
            alpha
        };
        for c in 0..3 {
            px.0[c] = (px.0[c] as f64 * (1.0 - a) + color.0[c] as f64 * a).round() as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, dim: usize, data: Vec<f64>, size: u32) -> PatchGrid {
        PatchGrid::new(rows, cols, dim, data, (size, size), size / rows as u32).unwrap()
    }

    #[test]
    fn pooled_exemplar_means() {
        let constant = grid(2, 2, 2, [3.0, -1.0].repeat(4), 32);
        let split = grid(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], 32);
        let (pos, neg) = exemplar_pooled_embeddings(&[constant], &[split]);
        assert_eq!(pos, vec![vec![3.0, -1.0]]);
        assert_eq!(neg, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn peak_lands_in_the_matching_quadrant() {
        let g = grid(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 32);
        let hm = compute_heatmap(&g, &[1.0, 0.0], 32, 32, Upsampling::Bilinear).unwrap();
        let (x, y) = hm.argmax();
        assert!(x < 16 && y < 16);
    }

    #[test]
    fn orthogonal_query_gives_zero_map() {
        let g = grid(2, 2, 3, [1.0, 0.0, 0.0].repeat(4), 32);
        let hm = compute_heatmap(&g, &[0.0, 0.0, 2.0], 32, 32, Upsampling::Bilinear).unwrap();
        assert!(hm.as_slice().iter().all(|v| *v == 0.0));
        assert!(compute_heatmap(&g, &[0.0; 3], 32, 32, Upsampling::Bilinear).is_err());
    }

    #[test]
    fn nearest_mode_is_piecewise_constant() {
        let cells = [0.1, 0.2, 0.3, 0.4];
        let up = upsample(&cells, 2, 2, 4, 4, Upsampling::Nearest);
        assert_eq!(&up[..4], &[0.1, 0.1, 0.2, 0.2]);
        assert_eq!(&up[12..], &[0.3, 0.3, 0.4, 0.4]);
    }

    #[test]
    fn constant_map_binarizes_to_all_true() {
        let hm = HeatmapValues::from_vec(8, 4, vec![0.3; 32]).unwrap();
        let b = binarize(hm, 0.85).unwrap();
        assert!(b.binary.is_full());
        assert_eq!(b.threshold, 0.3);
    }

    #[test]
    fn tiny_quantile_keeps_everything() {
        let data: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b = binarize(HeatmapValues::from_vec(10, 10, data).unwrap(), 1e-12).unwrap();
        assert!(b.binary.is_full());
        assert!(quantile_threshold(&[1.0], 1.0).is_err());
        assert!(quantile_threshold(&[1.0], 0.0).is_err());
    }

    #[test]
    fn overlay_has_image_size() {
        let img = RasterImage::from_rgb("a", RgbImage::new(32, 32)).unwrap();
        let data: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
        let hm = binarize(HeatmapValues::from_vec(32, 32, data).unwrap(), 0.5).unwrap();
        let out = overlay(&img, &hm, 0.5).unwrap();
        assert_eq!(out.dimensions(), (32, 32));
        assert_ne!(out.get_pixel(31, 31), out.get_pixel(0, 0));
    }

    proptest! {
        #[test]
        fn binarization_monotone_and_keeps_peak(
            data in proptest::collection::vec(-1.0f64..1.0, 1..200),
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
        ) {
            let n = data.len() as u32;
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = binarize(HeatmapValues::from_vec(n, 1, data.clone()).unwrap(), lo).unwrap();
            let b = binarize(HeatmapValues::from_vec(n, 1, data.clone()).unwrap(), hi).unwrap();
            for i in 0..n {
                prop_assert!(!b.binary.get(i, 0) || a.binary.get(i, 0));
            }
            let (px, _) = a.values.argmax();
            prop_assert!(b.binary.get(px, 0));
            for (i, v) in data.iter().enumerate() {
                prop_assert_eq!(a.binary.get(i as u32, 0), *v >= a.threshold);
            }
        }
    }
}
