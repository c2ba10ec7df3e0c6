//! Vision transformer backbone exported to ONNX, run with tract.
//!
//! The model takes `[1, 3, S, S]` normalized pixels and returns token
//! features `[1, T, d]`: one class token, optional register tokens, then
//! `(S / patch)^2` patch tokens in row-major order.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::preprocess::{
    region_input, resize_short_side_center_crop, resize_square, to_chw_normalized, PreprocessConfig,
};
use super::{check_region_mask, Embedding, EmbeddingBackend, EmbeddingKind, PatchGrid, RegionMode};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnxBackboneConfig {
    pub model: PathBuf,
    pub preprocess: PreprocessConfig,
    pub patch_size: u32,
    /// Tokens between the class token and the first patch token.
    pub register_tokens: usize,
    pub region_mode: RegionMode,
}

impl OnnxBackboneConfig {
    pub fn new(model: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            preprocess: PreprocessConfig::default(),
            patch_size: 14,
            register_tokens: 0,
            region_mode: RegionMode::ZeroFill,
        }
    }
}

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxBackbone {
    plan: Plan,
    config: OnnxBackboneConfig,
    dim: usize,
    id: String,
}

fn backend_err(context: &str) -> impl Fn(TractError) -> Error + '_ {
    move |e| Error::backend(format!("{context}: {e}"))
}

impl OnnxBackbone {
    pub fn load(config: OnnxBackboneConfig) -> Result<Self> {
        let side = config.preprocess.input_size;
        if config.patch_size == 0 || !side.is_multiple_of(config.patch_size) {
            return Err(Error::Config(format!(
                "input size {side} is not a multiple of patch size {}",
                config.patch_size
            )));
        }
        let plan = load_plan(&config.model, side)?;
        let mut this = Self {
            plan,
            id: String::new(),
            dim: 0,
            config,
        };
        let probe = this.run(&RgbImage::new(side, side))?;
        this.dim = probe.1;
        let expected = this.patch_tokens() + 1 + this.config.register_tokens;
        if probe.0.len() != expected * this.dim {
            return Err(Error::backend(format!(
                "model emits {} tokens, expected {expected}",
                probe.0.len() / this.dim
            )));
        }
        let name = this
            .config
            .model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        this.id = format!("onnx:{name}:{side}px:p{}", this.config.patch_size);
        Ok(this)
    }

    pub fn config(&self) -> &OnnxBackboneConfig {
        &self.config
    }

    fn cells(&self) -> usize {
        (self.config.preprocess.input_size / self.config.patch_size) as usize
    }

    fn patch_tokens(&self) -> usize {
        self.cells() * self.cells()
    }

    /// Flat token features and the feature width.
    fn run(&self, img: &RgbImage) -> Result<(Vec<f32>, usize)> {
        let side = self.config.preprocess.input_size as usize;
        let data = to_chw_normalized(img, &self.config.preprocess);
        let input = tract_ndarray::Array4::from_shape_vec((1, 3, side, side), data)
            .map_err(|e| Error::backend(e.to_string()))?
            .into_tensor();
        let out = self.plan.run(tvec!(input.into())).map_err(backend_err("inference"))?;
        let view = out[0].to_plain_array_view::<f32>().map_err(backend_err("output"))?;
        let shape = view.shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::backend(format!("unexpected output shape {shape:?}")));
        }
        Ok((view.iter().copied().collect(), shape[2]))
    }

    fn class_token(&self, img: &RgbImage, source: &str, kind: EmbeddingKind) -> Result<Embedding> {
        let (tokens, dim) = self.run(img)?;
        Embedding::new(tokens[..dim].iter().map(|&v| v as f64).collect(), kind, source)
    }
}

fn load_plan(path: &Path, side: u32) -> Result<Plan> {
    let s = side as usize;
    tract_onnx::onnx()
        .model_for_path(path)
        .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, s, s]).into()))
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(|e| Error::backend(format!("loading {}: {e}", path.display())))
}

impl EmbeddingBackend for OnnxBackbone {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_global(&self, image: &RasterImage) -> Result<Embedding> {
        let img = resize_short_side_center_crop(image.pixels(), self.config.preprocess.input_size);
        self.class_token(&img, image.id(), EmbeddingKind::Global)
    }

    fn embed_patches(&self, image: &RasterImage) -> Result<PatchGrid> {
        let img = resize_square(image.pixels(), self.config.preprocess.input_size);
        let (tokens, dim) = self.run(&img)?;
        let skip = (1 + self.config.register_tokens) * dim;
        let data: Vec<f64> = tokens[skip..].iter().map(|&v| v as f64).collect();
        let cells = self.cells();
        let size = (image.height(), image.width());
        PatchGrid::new(
            cells,
            cells,
            dim,
            data,
            size,
            PatchGrid::covering_stride(size, cells, cells),
        )
    }

    fn embed_masked_region(&self, image: &RasterImage, mask: &BinaryMask) -> Result<Embedding> {
        check_region_mask(image, mask)?;
        let region = region_input(image, mask, self.config.region_mode)?;
        let img = resize_short_side_center_crop(&region, self.config.preprocess.input_size);
        self.class_token(
            &img,
            &format!("{}#{}", image.id(), &mask.sha256()[..12]),
            EmbeddingKind::Region,
        )
    }
}
