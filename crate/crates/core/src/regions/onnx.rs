//! Point-promptable segmenter from an encoder/decoder ONNX export pair.
//!
//! Encoder: `[1, 3, 1024, 1024]` normalized pixels (long side resized to
//! 1024, zero padding bottom/right) to image embeddings. Decoder inputs, in
//! order: embeddings, point coords `[1, 2, 2]`, point labels `[1, 2]`, mask
//! input `[1, 1, 256, 256]`, has-mask flag `[1]`, original size `[2]`.
//! Outputs include IoU predictions `[1, K]` and low-resolution mask logits
//! `[1, K, 256, 256]`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::amg::{MaskLogits, PromptableSegmenter};
use crate::embedding::preprocess::{IMAGENET_MEAN, IMAGENET_STD};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

const INPUT_SIDE: usize = 1024;
const LOW_RES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnxSamConfig {
    pub encoder: PathBuf,
    pub decoder: PathBuf,
    pub iou_output: usize,
    pub low_res_output: usize,
}

impl OnnxSamConfig {
    pub fn new(encoder: impl Into<PathBuf>, decoder: impl Into<PathBuf>) -> Self {
        Self {
            encoder: encoder.into(),
            decoder: decoder.into(),
            iou_output: 1,
            low_res_output: 2,
        }
    }
}

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxSam {
    encoder: Plan,
    decoder: Plan,
    config: OnnxSamConfig,
    id: String,
}

/// Image embeddings plus the geometry needed to map prompts and masks.
pub struct SamEncoding {
    embeddings: Tensor,
    width: u32,
    height: u32,
    scale: f64,
}

fn backend_err(context: &str) -> impl Fn(TractError) -> Error + '_ {
    move |e| Error::backend(format!("{context}: {e}"))
}

fn load(path: &Path, facts: Vec<InferenceFact>) -> Result<Plan> {
    let mut model = tract_onnx::onnx()
        .model_for_path(path)
        .map_err(|e| Error::backend(format!("loading {}: {e}", path.display())))?;
    for (i, fact) in facts.into_iter().enumerate() {
        model = model.with_input_fact(i, fact).map_err(backend_err("input fact"))?;
    }
    model
        .into_optimized()
        .and_then(|m| m.into_runnable())
        .map_err(|e| Error::backend(format!("preparing {}: {e}", path.display())))
}

impl OnnxSam {
    pub fn load(config: OnnxSamConfig) -> Result<Self> {
        let encoder = load(&config.encoder, vec![f32::fact([1, 3, INPUT_SIDE, INPUT_SIDE]).into()])?;
        let probe = encoder
            .run(tvec!(Tensor::zero::<f32>(&[1, 3, INPUT_SIDE, INPUT_SIDE])
                .map_err(backend_err("probe"))?
                .into()))
            .map_err(backend_err("encoder probe"))?;
        let embed_shape = probe[0].shape().to_vec();
        let side = INPUT_SIDE as f32;
        let decoder = load(
            &config.decoder,
            vec![
                f32::fact(&embed_shape).into(),
                f32::fact([1, 2, 2]).into(),
                f32::fact([1, 2]).into(),
                f32::fact([1, 1, LOW_RES, LOW_RES]).into(),
                f32::fact([1]).into(),
                // a constant frame keeps every output shape static
                InferenceFact::from(tensor1(&[side, side])),
            ],
        )?;
        let name = config
            .decoder
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            encoder,
            decoder,
            id: format!("onnx-sam:{name}"),
            config,
        })
    }
}

impl PromptableSegmenter for OnnxSam {
    type Encoded = SamEncoding;

    fn id(&self) -> &str {
        &self.id
    }

    fn encode(&self, image: &RasterImage) -> Result<SamEncoding> {
        let (w, h) = (image.width(), image.height());
        let scale = INPUT_SIDE as f64 / w.max(h) as f64;
        let nw = ((w as f64 * scale).round() as u32).clamp(1, INPUT_SIDE as u32);
        let nh = ((h as f64 * scale).round() as u32).clamp(1, INPUT_SIDE as u32);
        let resized = imageops::resize(image.pixels(), nw, nh, FilterType::Triangle);
        let plane = INPUT_SIDE * INPUT_SIDE;
        let mut data = vec![0f32; 3 * plane];
        for (x, y, px) in resized.enumerate_pixels() {
            let i = y as usize * INPUT_SIDE + x as usize;
            for c in 0..3 {
                data[c * plane + i] = (px.0[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            }
        }
        let input = tract_ndarray::Array4::from_shape_vec((1, 3, INPUT_SIDE, INPUT_SIDE), data)
            .map_err(|e| Error::backend(e.to_string()))?
            .into_tensor();
        let out = self.encoder.run(tvec!(input.into())).map_err(backend_err("encoder"))?;
        Ok(SamEncoding {
            embeddings: out[0].clone().into_tensor(),
            width: w,
            height: h,
            scale,
        })
    }

    fn predict_point(&self, enc: &SamEncoding, x: f64, y: f64) -> Result<Vec<MaskLogits>> {
        let (sx, sy) = ((x * enc.scale) as f32, (y * enc.scale) as f32);
        let coords = tract_ndarray::Array3::from_shape_vec((1, 2, 2), vec![sx, sy, 0.0, 0.0])
            .map_err(|e| Error::backend(e.to_string()))?
            .into_tensor();
        // second point is the "no box" padding prompt
        let labels = tract_ndarray::Array2::from_shape_vec((1, 2), vec![1f32, -1.0])
            .map_err(|e| Error::backend(e.to_string()))?
            .into_tensor();
        let mask_input = Tensor::zero::<f32>(&[1, 1, LOW_RES, LOW_RES]).map_err(backend_err("mask input"))?;
        let has_mask = tensor1(&[0f32]);
        let side = INPUT_SIDE as f32;
        let out = self
            .decoder
            .run(tvec!(
                enc.embeddings.clone().into(),
                coords.into(),
                labels.into(),
                mask_input.into(),
                has_mask.into(),
                tensor1(&[side, side]).into()
            ))
            .map_err(backend_err("decoder"))?;
        let ious = out
            .get(self.config.iou_output)
            .ok_or_else(|| Error::backend("decoder has no IoU output"))?
            .to_plain_array_view::<f32>()
            .map_err(backend_err("iou output"))?;
        let masks = out
            .get(self.config.low_res_output)
            .ok_or_else(|| Error::backend("decoder has no low-resolution mask output"))?
            .to_plain_array_view::<f32>()
            .map_err(backend_err("mask output"))?;
        let shape = masks.shape().to_vec();
        if shape.len() != 4 || shape[2] != LOW_RES || shape[3] != LOW_RES {
            return Err(Error::backend(format!("unexpected mask shape {shape:?}")));
        }
        let ious: Vec<f32> = ious.iter().copied().collect();
        if ious.len() != shape[1] {
            return Err(Error::backend(format!(
                "{} IoU scores for {} masks",
                ious.len(),
                shape[1]
            )));
        }
        let flat: Vec<f32> = masks.iter().copied().collect();
        Ok(ious
            .iter()
            .enumerate()
            .map(|(k, &iou)| {
                let low = &flat[k * LOW_RES * LOW_RES..(k + 1) * LOW_RES * LOW_RES];
                MaskLogits {
                    width: enc.width,
                    height: enc.height,
                    logits: upsample_logits(low, enc),
                    predicted_iou: iou,
                }
            })
            .collect())
    }
}

/// Bilinear lookup of each original pixel centre in the low-resolution map,
/// which covers the padded square input frame.
fn upsample_logits(low: &[f32], enc: &SamEncoding) -> Vec<f32> {
    let per_low = (LOW_RES as f64) / INPUT_SIDE as f64 * enc.scale;
    let max = (LOW_RES - 1) as f64;
    let mut out = Vec::with_capacity((enc.width * enc.height) as usize);
    for y in 0..enc.height {
        let fy = ((y as f64 + 0.5) * per_low - 0.5).clamp(0.0, max);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(LOW_RES - 1);
        for x in 0..enc.width {
            let fx = ((x as f64 + 0.5) * per_low - 0.5).clamp(0.0, max);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(LOW_RES - 1);
            let at = |r: usize, c: usize| low[r * LOW_RES + c] as f64;
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsampled_constant_map_stays_constant() {
        let enc = SamEncoding {
            embeddings: tensor0(0f32),
            width: 40,
            height: 20,
            scale: INPUT_SIDE as f64 / 40.0,
        };
        let out = upsample_logits(&vec![2.5; LOW_RES * LOW_RES], &enc);
        assert_eq!(out.len(), 800);
        assert!(out.iter().all(|v| (*v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn missing_model_is_a_backend_error() {
        let cfg = OnnxSamConfig::new("/nonexistent/enc.onnx", "/nonexistent/dec.onnx");
        assert!(matches!(OnnxSam::load(cfg), Err(Error::Backend(_))));
    }
}
