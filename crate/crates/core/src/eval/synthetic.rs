//! Seeded synthetic benchmark with planted objects, confounds and lookalikes.
//!
//! Every class has a target concept and a confound concept that co-occurs
//! with it (the surfboard and its waves). Concepts are orthonormal directions;
//! backgrounds and a distractor get their own directions.
//!
//! * Positive exemplars show target + confound, negatives show the confound.
//! * "Present" scenes hold the target above a confound strip. Proposals
//!   include the target, the strip, and their union.
//! * "Lookalike" scenes hold a confound patch with an object whose region
//!   embedding resembles the target while its patch features are confound-like.
//!
//! Subtracting negatives separates the target from its union with the strip;
//! the heatmap rejects lookalikes.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::coco::{Annotation, Category, GroundTruth, ImageInfo};
use crate::embedding::{region_key, EmbeddingBackend, FixtureBackend, FixtureFile, FixtureGrid};
use crate::error::{Error, Result};
use crate::pipeline::{prepare_images, PreparedExemplars};
use crate::raster::{BBox, BinaryMask, RasterImage};
use crate::regions::{FixtureSegmentation, RegionMask};
use crate::retrieval::write_atomic;
use crate::vector::normalized;

pub const SCENE_SIDE: u32 = 64;
pub const SCENE_CELLS: usize = 8;
pub const EXEMPLAR_SIDE: u32 = 32;
pub const EXEMPLAR_CELLS: usize = 4;
const CELL: u32 = SCENE_SIDE / SCENE_CELLS as u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub label: String,
    pub confound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub classes: Vec<SyntheticClass>,
    pub present_per_class: usize,
    pub lookalike_per_class: usize,
    /// Exemplars generated per class and polarity.
    pub max_exemplars: usize,
    /// Weight of the background concept in exemplar global embeddings.
    pub exemplar_background: f64,
    /// Norm of the noise on exemplar global embeddings.
    pub exemplar_noise: f64,
    /// Norm of a per-exemplar offset shared by all of its patches.
    pub exemplar_style_noise: f64,
    /// Norm of the noise on scene region embeddings.
    pub region_noise: f64,
    /// Norm of the noise on every individual patch vector.
    pub patch_noise: f64,
    /// Probability that a positive exemplar shows only background.
    pub outlier_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            classes: vec![
                SyntheticClass {
                    label: "surfboard".into(),
                    confound: "waves".into(),
                },
                SyntheticClass {
                    label: "fork".into(),
                    confound: "food".into(),
                },
            ],
            present_per_class: 6,
            lookalike_per_class: 3,
            max_exemplars: 10,
            exemplar_background: 0.5,
            exemplar_noise: 0.3,
            exemplar_style_noise: 0.6,
            region_noise: 0.2,
            patch_noise: 0.1,
            outlier_rate: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let needed = 2 * self.classes.len() + 4;
        if self.dim < needed {
            return Err(Error::Config(format!(
                "dimension {} is too small for {} orthogonal concepts",
                self.dim, needed
            )));
        }
        if self.classes.is_empty() || self.max_exemplars == 0 {
            return Err(Error::Config("the benchmark needs classes and exemplars".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Config("outlier rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Present,
    Lookalike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub image_id: u64,
    pub class: usize,
    pub kind: SceneKind,
    /// Target box for present scenes.
    pub planted: Option<BBox>,
}

/// Exemplar images for one class, in "engine rank" order.
#[derive(Debug, Clone)]
pub struct SyntheticExemplars {
    pub negative_query: String,
    pub positives: Vec<RasterImage>,
    pub negatives: Vec<RasterImage>,
    positive_png: Vec<Vec<u8>>,
    negative_png: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub config: SyntheticConfig,
    pub seed: u64,
    pub gt: GroundTruth,
    pub scenes: BTreeMap<u64, RasterImage>,
    pub scene_info: BTreeMap<u64, SceneInfo>,
    pub embeddings: FixtureFile,
    pub masks: BTreeMap<String, Vec<RegionMask>>,
    /// Keyed by label.
    pub exemplars: BTreeMap<String, SyntheticExemplars>,
}

struct Concepts {
    target: Vec<Vec<f64>>,
    confound: Vec<Vec<f64>>,
    background: [Vec<f64>; 2],
    distractor: [Vec<f64>; 2],
}

/// Gram-Schmidt over Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        if let Ok(u) = normalized(&v) {
            basis.push(u);
        }
    }
    basis
}

/// Gaussian vector with expected norm close to `scale`.
fn noise(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let s = scale / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect()
}

fn combine(parts: &[(f64, &[f64])], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (w, v) in parts {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("png encoding to memory");
    out.into_inner()
}

/// Patch-cell content of a scene, used for both pixels and patch features.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Background(usize),
    Target,
    Confound,
    Lookalike,
    Distractor(usize),
}

fn cell_color(cell: Cell, class: usize) -> [u8; 3] {
    let shade = (class as u8).wrapping_mul(60);
    match cell {
        Cell::Background(0) => [70, 140, 70],
        Cell::Background(_) => [150, 150, 150],
        Cell::Target => [220, 40u8.wrapping_add(shade), 40],
        Cell::Lookalike => [170, 60u8.wrapping_add(shade), 60],
        Cell::Confound => [40, 80u8.wrapping_add(shade), 210],
        Cell::Distractor(_) => [230, 210, 40],
    }
}

fn cells_mask(cells: &[(usize, usize)]) -> BinaryMask {
    BinaryMask::from_fn(SCENE_SIDE, SCENE_SIDE, |x, y| {
        cells.contains(&((y / CELL) as usize, (x / CELL) as usize))
    })
}

fn block(r0: usize, c0: usize, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in r0..r0 + rows {
        for c in c0..c0 + cols {
            out.push((r, c));
        }
    }
    out
}

impl SyntheticBenchmark {
    pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = config.dim;
        let n_classes = config.classes.len();
        let basis = orthonormal(&mut rng, 2 * n_classes + 4, dim);
        let concepts = Concepts {
            target: basis[..n_classes].to_vec(),
            confound: basis[n_classes..2 * n_classes].to_vec(),
            background: [basis[2 * n_classes].clone(), basis[2 * n_classes + 1].clone()],
            distractor: [basis[2 * n_classes + 2].clone(), basis[2 * n_classes + 3].clone()],
        };

        let mut embeddings = FixtureFile {
            dimension: dim,
            ..Default::default()
        };
        let mut exemplars = BTreeMap::new();
        for (ci, class) in config.classes.iter().enumerate() {
            let set = Self::exemplars_for(config, ci, &concepts, &mut rng, &mut embeddings)?;
            exemplars.insert(
                class.label.clone(),
                SyntheticExemplars {
                    negative_query: class.confound.clone(),
                    ..set
                },
            );
        }

        let categories = config
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    i as u64 + 1,
                    Category {
                        id: i as u64 + 1,
                        name: c.label.clone(),
                    },
                )
            })
            .collect();
        let mut gt = GroundTruth {
            images: BTreeMap::new(),
            annotations: Vec::new(),
            categories,
        };
        let mut scenes = BTreeMap::new();
        let mut scene_info = BTreeMap::new();
        let mut masks = BTreeMap::new();
        let mut next_id = 1u64;
        for ci in 0..n_classes {
            let kinds = std::iter::repeat_n(SceneKind::Present, config.present_per_class)
                .chain(std::iter::repeat_n(SceneKind::Lookalike, config.lookalike_per_class));
            for kind in kinds {
                let image_id = next_id;
                next_id += 1;
                let name = format!("scene_{image_id:04}");
                let (image, regions, planted) =
                    Self::scene(config, ci, kind, &name, &concepts, &mut rng, &mut embeddings)?;
                gt.images.insert(
                    image_id,
                    ImageInfo {
                        id: image_id,
                        file_name: format!("{name}.png"),
                        width: SCENE_SIDE,
                        height: SCENE_SIDE,
                    },
                );
                if let Some(b) = planted {
                    gt.annotations.push(Annotation {
                        id: gt.annotations.len() as u64 + 1,
                        image_id,
                        category_id: ci as u64 + 1,
                        bbox: b.to_xywh(),
                        iscrowd: 0,
                        area: Some(b.area()),
                        segmentation: None,
                    });
                }
                scenes.insert(image_id, image);
                scene_info.insert(
                    image_id,
                    SceneInfo {
                        image_id,
                        class: ci,
                        kind,
                        planted,
                    },
                );
                masks.insert(name, regions);
            }
        }
        embeddings.validate()?;
        Ok(Self {
            config: config.clone(),
            seed,
            gt,
            scenes,
            scene_info,
            embeddings,
            masks,
            exemplars,
        })
    }

    fn exemplars_for(
        config: &SyntheticConfig,
        ci: usize,
        concepts: &Concepts,
        rng: &mut ChaCha8Rng,
        embeddings: &mut FixtureFile,
    ) -> Result<SyntheticExemplars> {
        let dim = config.dim;
        let t = &concepts.target[ci];
        let c = &concepts.confound[ci];
        let mut out = SyntheticExemplars {
            negative_query: String::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
            positive_png: Vec::new(),
            negative_png: Vec::new(),
        };
        for positive in [true, false] {
            for i in 0..config.max_exemplars {
                let bg = &concepts.background[rng.gen_range(0..2)];
                let outlier = positive && rng.gen_bool(config.outlier_rate);
                // 4x4 layout: row 0 background; rows 1-2 object in the middle
                // columns flanked by background; row 3 confound. Negatives put
                // confound where the object would be.
                let layout = |r: usize, col: usize| -> Cell {
                    if outlier {
                        return if (1..3).contains(&r) && (1..3).contains(&col) {
                            Cell::Distractor(0)
                        } else {
                            Cell::Background(0)
                        };
                    }
                    match (positive, r, col) {
                        (_, 0, _) => Cell::Background(0),
                        (true, 1..=2, 1..=2) => Cell::Target,
                        (_, 1..=2, 0 | 3) => Cell::Background(0),
                        _ => Cell::Confound,
                    }
                };
                let w = config.exemplar_background;
                let global = if outlier {
                    combine(&[(1.0, &concepts.distractor[0]), (w, bg)], dim)
                } else if positive {
                    combine(&[(1.0, t), (1.0, c), (w, bg)], dim)
                } else {
                    combine(&[(1.0, c), (w, bg)], dim)
                };
                let global = add(&global, &noise(rng, dim, config.exemplar_noise));
                let style = noise(rng, dim, config.exemplar_style_noise);
                let grid = FixtureGrid::from_fn(EXEMPLAR_CELLS, EXEMPLAR_CELLS, |r, col| {
                    let base: &[f64] = match layout(r, col) {
                        Cell::Target => t,
                        Cell::Confound => c,
                        Cell::Distractor(_) => &concepts.distractor[0],
                        _ => bg,
                    };
                    add(&add(base, &style), &noise(rng, dim, config.patch_noise))
                });

                let mut img = RgbImage::new(EXEMPLAR_SIDE, EXEMPLAR_SIDE);
                let step = EXEMPLAR_SIDE / EXEMPLAR_CELLS as u32;
                for (x, y, px) in img.enumerate_pixels_mut() {
                    let cell = layout((y / step) as usize, (x / step) as usize);
                    let jitter = rng.gen_range(0..24u8);
                    let [r, g, b] = cell_color(cell, ci);
                    *px = Rgb([
                        r.saturating_sub(jitter),
                        g.saturating_sub(jitter),
                        b.saturating_sub(jitter),
                    ]);
                }
                // unique signature so every exemplar file hashes differently
                img.put_pixel(0, 0, Rgb([ci as u8, positive as u8, i as u8]));
                let png = png_bytes(&img);
                let raster = RasterImage::decode(format!("{}_{i:02}", if positive { "pos" } else { "neg" }), &png)?;
                embeddings.entries.insert(raster.sha256().to_string(), global);
                embeddings.patch_grids.insert(raster.sha256().to_string(), grid);
                if positive {
                    out.positives.push(raster);
                    out.positive_png.push(png);
                } else {
                    out.negatives.push(raster);
                    out.negative_png.push(png);
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn scene(
        config: &SyntheticConfig,
        ci: usize,
        kind: SceneKind,
        name: &str,
        concepts: &Concepts,
        rng: &mut ChaCha8Rng,
        embeddings: &mut FixtureFile,
    ) -> Result<(RasterImage, Vec<RegionMask>, Option<BBox>)> {
        let dim = config.dim;
        let n = SCENE_CELLS;
        let mut cells = vec![vec![Cell::Background(0); n]; n];
        for row in cells.iter_mut() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = Cell::Background(usize::from(c >= n / 2));
            }
        }
        let t = &concepts.target[ci];
        let c = &concepts.confound[ci];

        // (cells, embedding) for every proposal
        let mut proposals: Vec<(Vec<(usize, usize)>, Vec<f64>)> = Vec::new();
        let occupied: Vec<(usize, usize)>;
        let planted;
        match kind {
            SceneKind::Present => {
                let a = rng.gen_range(0..=n - 4);
                let b = rng.gen_range(1..=n - 3);
                let target = block(a, b, 2, 2);
                let strip = block(a + 2, b - 1, 2, 4);
                for &(r, col) in &target {
                    cells[r][col] = Cell::Target;
                }
                for &(r, col) in &strip {
                    cells[r][col] = Cell::Confound;
                }
                let union: Vec<_> = target.iter().chain(&strip).copied().collect();
                proposals.push((target.clone(), add(t, &noise(rng, dim, config.region_noise))));
                proposals.push((strip.clone(), add(c, &noise(rng, dim, config.region_noise))));
                proposals.push((union, add(&add(t, c), &noise(rng, dim, config.region_noise))));
                occupied = block(a, b - 1, 4, 4);
                planted = Some(BBox::new(
                    (b as u32 * CELL) as f64,
                    (a as u32 * CELL) as f64,
                    ((b + 2) as u32 * CELL) as f64,
                    ((a + 2) as u32 * CELL) as f64,
                ));
            }
            SceneKind::Lookalike => {
                let a = rng.gen_range(0..=n - 4);
                let b = rng.gen_range(0..=n - 4);
                let area = block(a, b, 4, 4);
                let inner = block(a + 1, b + 1, 2, 2);
                let ring: Vec<_> = area.iter().filter(|p| !inner.contains(p)).copied().collect();
                for &(r, col) in &area {
                    cells[r][col] = Cell::Confound;
                }
                for &(r, col) in &inner {
                    cells[r][col] = Cell::Lookalike;
                }
                proposals.push((inner, add(t, &noise(rng, dim, config.region_noise))));
                proposals.push((ring, add(c, &noise(rng, dim, config.region_noise))));
                proposals.push((area.clone(), add(&add(t, c), &noise(rng, dim, config.region_noise))));
                occupied = area;
                planted = None;
            }
        }

        // distractor somewhere free
        let free: Vec<(usize, usize)> = (0..n - 1)
            .flat_map(|r| (0..n - 1).map(move |col| (r, col)))
            .filter(|&(r, col)| block(r, col, 2, 2).iter().all(|p| !occupied.contains(p)))
            .collect();
        let mut taken = occupied.clone();
        if !free.is_empty() {
            let (r, col) = free[rng.gen_range(0..free.len())];
            let d = block(r, col, 2, 2);
            for &(rr, cc) in &d {
                cells[rr][cc] = Cell::Distractor(0);
            }
            proposals.push((
                d.clone(),
                add(&concepts.distractor[0], &noise(rng, dim, config.region_noise)),
            ));
            taken.extend(d);
        }
        for half in 0..2 {
            let bg: Vec<(usize, usize)> = (0..n)
                .flat_map(|r| (0..n).map(move |col| (r, col)))
                .filter(|&(r, col)| usize::from(col >= n / 2) == half && !taken.contains(&(r, col)))
                .collect();
            if !bg.is_empty() {
                proposals.push((
                    bg,
                    add(&concepts.background[half], &noise(rng, dim, config.region_noise)),
                ));
            }
        }

        // pixels
        let mut img = RgbImage::new(SCENE_SIDE, SCENE_SIDE);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let cell = cells[(y / CELL) as usize][(x / CELL) as usize];
            let jitter = rng.gen_range(0..24u8);
            let [r, g, b] = cell_color(cell, ci);
            *px = Rgb([
                r.saturating_sub(jitter),
                g.saturating_sub(jitter),
                b.saturating_sub(jitter),
            ]);
        }
        let image = RasterImage::from_rgb(name, img)?;

        // patch features: lookalike cells carry confound features
        let grid = FixtureGrid::from_fn(n, n, |r, col| {
            let base: &[f64] = match cells[r][col] {
                Cell::Target => t,
                Cell::Confound | Cell::Lookalike => c,
                Cell::Distractor(k) => &concepts.distractor[k],
                Cell::Background(k) => &concepts.background[k],
            };
            add(base, &noise(rng, dim, config.patch_noise))
        });
        let flat: Vec<&[f64]> = grid.rows.iter().flatten().map(Vec::as_slice).collect();
        let global = crate::vector::mean(&flat)?;
        embeddings.entries.insert(name.to_string(), global);
        embeddings.patch_grids.insert(name.to_string(), grid);

        let mut regions = Vec::with_capacity(proposals.len());
        for (cells, vector) in proposals {
            let mask = cells_mask(&cells);
            embeddings.entries.insert(region_key(name, &mask), vector);
            regions.push(RegionMask::new(mask, Some(1.0))?);
        }
        Ok((image, regions, planted))
    }

    pub fn embedder(&self) -> Result<FixtureBackend> {
        FixtureBackend::new(self.embeddings.clone())
    }

    pub fn segmenter(&self) -> FixtureSegmentation {
        let mut seg = FixtureSegmentation::in_memory();
        for (k, v) in &self.masks {
            seg.insert(k.clone(), v.clone());
        }
        seg
    }

    pub fn labels(&self) -> Vec<String> {
        self.config.classes.iter().map(|c| c.label.clone()).collect()
    }

    /// Embedded exemplars for one label using the first `n_pos` / `n_neg` images.
    pub fn prepare(
        &self,
        label: &str,
        n_pos: usize,
        n_neg: usize,
        backend: &dyn EmbeddingBackend,
    ) -> Result<PreparedExemplars> {
        let set = self
            .exemplars
            .get(label)
            .ok_or_else(|| Error::input(format!("benchmark has no label {label:?}")))?;
        let pos: Vec<&RasterImage> = set.positives.iter().take(n_pos).collect();
        let neg: Vec<&RasterImage> = set.negatives.iter().take(n_neg).collect();
        prepare_images(label, &pos, &neg, backend)
    }

    /// Lay the benchmark out on disk:
    ///
    /// ```text
    /// images/scene_0001.png ...    annotations.json
    /// embeddings.json              masks/<scene>/index.json + PNGs
    /// engine/<label>/NN.png        engine/<confound>/NN.png
    /// ```
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        for (id, img) in &self.scenes {
            let path = images.join(&self.gt.images[id].file_name);
            write_atomic(&path, &png_bytes(img.pixels()))?;
        }
        super::coco::write_ground_truth(&self.gt, &dir.join("annotations.json"))?;
        write_atomic(&dir.join("embeddings.json"), &serde_json::to_vec(&self.embeddings)?)?;
        for (key, regions) in &self.masks {
            FixtureSegmentation::write_image_masks(&dir.join("masks"), key, regions)?;
        }
        for (label, set) in &self.exemplars {
            for (folder, pngs) in [(label, &set.positive_png), (&set.negative_query, &set.negative_png)] {
                for (i, png) in pngs.iter().enumerate() {
                    write_atomic(&dir.join("engine").join(folder).join(format!("{i:02}.png")), png)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SyntheticConfig::default();
        let a = SyntheticBenchmark::generate(&cfg, 7).unwrap();
        let b = SyntheticBenchmark::generate(&cfg, 7).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.gt, b.gt);
        let n_scenes = cfg.classes.len() * (cfg.present_per_class + cfg.lookalike_per_class);
        assert_eq!(a.scenes.len(), n_scenes);
        assert_eq!(a.gt.annotations.len(), cfg.classes.len() * cfg.present_per_class);
        let backend = a.embedder().unwrap();
        let seg = a.segmenter();
        use crate::regions::SegmentationBackend;
        for img in a.scenes.values() {
            for r in seg.propose(img).unwrap() {
                backend.embed_masked_region(img, r.mask()).unwrap();
            }
            assert_eq!(backend.embed_patches(img).unwrap().rows(), SCENE_CELLS);
        }
        let prepared = a.prepare("fork", 3, 2, &backend).unwrap();
        assert_eq!(
            (prepared.positive_globals.len(), prepared.negative_globals.len()),
            (3, 2)
        );
    }

    #[test]
    fn disk_layout() {
        let cfg = SyntheticConfig {
            present_per_class: 1,
            lookalike_per_class: 1,
            max_exemplars: 2,
            ..Default::default()
        };
        let bench = SyntheticBenchmark::generate(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bench.write_to(dir.path()).unwrap();
        assert!(dir.path().join("engine/waves/01.png").exists());
        assert!(dir.path().join("masks/scene_0001/index.json").exists());
        let gt = super::super::coco::load_ground_truth(&dir.path().join("annotations.json")).unwrap();
        assert_eq!(gt, bench.gt);
        // exemplar files hash to their fixture keys
        let bytes = std::fs::read(dir.path().join("engine/fork/00.png")).unwrap();
        let img = RasterImage::decode("x", &bytes).unwrap();
        assert!(bench.embeddings.entries.contains_key(img.sha256()));
    }
}
