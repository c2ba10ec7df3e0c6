//! Run the detector over a labelled dataset and collect COCO results.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coco::GroundTruth;
use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::grounding::CocoResult;
use crate::pipeline::{detect, PipelineParams, PreparedExemplars};
use crate::raster::RasterImage;
use crate::regions::SegmentationBackend;

/// Which labels to query on each image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelsPerImage {
    /// Every category on every image; false positives on absent labels count.
    #[default]
    All,
    /// Only categories annotated on the image.
    Present,
}

impl std::str::FromStr for LabelsPerImage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "present" => Ok(Self::Present),
            other => Err(Error::Config(format!("unknown label mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Zero uses the global rayon pool.
    pub workers: usize,
    pub labels_per_image: LabelsPerImage,
    /// Set to stop scheduling new images; finished ones are kept.
    pub interrupt: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetRun {
    pub results: Vec<CocoResult>,
    pub failures: Vec<ImageFailure>,
    pub processed: usize,
    pub incomplete: bool,
}

enum Outcome {
    Done(Vec<CocoResult>),
    Failed(String),
    Skipped,
}

/// Detect every category with exemplars on every image of `gt`.
///
/// A failing image is recorded and skipped; the rest of the run continues.
/// Results are ordered by image id, then category id, then rank.
pub fn run_dataset<F>(
    gt: &GroundTruth,
    exemplars: &BTreeMap<u64, PreparedExemplars>,
    load_image: F,
    embedder: &dyn EmbeddingBackend,
    segmenter: &dyn SegmentationBackend,
    params: &PipelineParams,
    options: &RunOptions,
) -> Result<DatasetRun>
where
    F: Fn(u64) -> Result<RasterImage> + Sync,
{
    for id in exemplars.keys() {
        if !gt.categories.contains_key(id) {
            return Err(Error::Config(format!("exemplars given for unknown category {id}")));
        }
    }
    let image_ids: Vec<u64> = gt.images.keys().copied().collect();
    let stopped = || options.interrupt.as_ref().is_some_and(|f| f.load(Ordering::SeqCst));

    let process = |&image_id: &u64| -> Outcome {
        if stopped() {
            return Outcome::Skipped;
        }
        let categories: Vec<u64> = match options.labels_per_image {
            LabelsPerImage::All => exemplars.keys().copied().collect(),
            LabelsPerImage::Present => gt
                .categories_in(image_id)
                .into_iter()
                .filter(|c| exemplars.contains_key(c))
                .collect(),
        };
        let run = || -> Result<Vec<CocoResult>> {
            let image = load_image(image_id)?;
            let mut out = Vec::new();
            for cat in categories {
                let found = detect(&image, &exemplars[&cat], embedder, segmenter, params)?;
                out.extend(found.detections.iter().map(|d| d.coco_result(image_id, cat)));
            }
            Ok(out)
        };
        match run() {
            Ok(r) => Outcome::Done(r),
            Err(e) => {
                log::warn!("image {image_id} failed: {e}");
                Outcome::Failed(e.to_string())
            }
        }
    };

    let outcomes: Vec<Outcome> = if options.workers == 0 {
        image_ids.par_iter().map(process).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| image_ids.par_iter().map(process).collect())
    };

    let mut run = DatasetRun::default();
    for (id, outcome) in image_ids.iter().zip(outcomes) {
        match outcome {
            Outcome::Done(r) => {
                run.results.extend(r);
                run.processed += 1;
            }
            Outcome::Failed(error) => {
                run.failures.push(ImageFailure { image_id: *id, error });
                run.processed += 1;
            }
            Outcome::Skipped => run.incomplete = true,
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synthetic::{SyntheticBenchmark, SyntheticConfig};

    fn bench() -> SyntheticBenchmark {
        SyntheticBenchmark::generate(
            &SyntheticConfig {
                present_per_class: 2,
                lookalike_per_class: 1,
                max_exemplars: 4,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    fn prepared(b: &SyntheticBenchmark, backend: &dyn EmbeddingBackend) -> BTreeMap<u64, PreparedExemplars> {
        b.gt.categories
            .iter()
            .map(|(id, c)| (*id, b.prepare(&c.name, 4, 4, backend).unwrap()))
            .collect()
    }

    #[test]
    fn failures_are_isolated_and_order_is_stable() {
        let b = bench();
        let backend = b.embedder().unwrap();
        let seg = b.segmenter();
        let ex = prepared(&b, &backend);
        let load = |id: u64| {
            if id == 2 {
                Err(Error::input("corrupt"))
            } else {
                Ok(b.scenes[&id].clone())
            }
        };
        let params = PipelineParams::default();
        let one = run_dataset(
            &b.gt,
            &ex,
            load,
            &backend,
            &seg,
            &params,
            &RunOptions {
                workers: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let four = run_dataset(
            &b.gt,
            &ex,
            load,
            &backend,
            &seg,
            &params,
            &RunOptions {
                workers: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one, four);
        assert_eq!(one.failures.len(), 1);
        assert_eq!(one.failures[0].image_id, 2);
        assert_eq!(one.processed, b.gt.images.len());
        assert!(!one.incomplete);
        assert!(one
            .results
            .windows(2)
            .all(|w| (w[0].image_id, w[0].category_id) <= (w[1].image_id, w[1].category_id)));
    }

    #[test]
    fn interrupt_marks_run_incomplete() {
        let b = bench();
        let backend = b.embedder().unwrap();
        let seg = b.segmenter();
        let ex = prepared(&b, &backend);
        let flag = Arc::new(AtomicBool::new(true));
        let run = run_dataset(
            &b.gt,
            &ex,
            |id| Ok(b.scenes[&id].clone()),
            &backend,
            &seg,
            &PipelineParams::default(),
            &RunOptions {
                interrupt: Some(flag),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(run.incomplete);
        assert_eq!(run.processed, 0);
    }
}
