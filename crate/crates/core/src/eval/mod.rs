//! Dataset evaluation: ground truth, matching, AP, and experiment drivers.

pub mod coco;
pub mod experiments;
pub mod metrics;
pub mod plots;
pub mod runner;
pub mod stats;
pub mod synthetic;

pub use coco::{load_ground_truth, write_ground_truth, Annotation, Category, CocoFile, GroundTruth, ImageInfo};
pub use metrics::{evaluate, ApInterpolation, ClassReport, EvalOptions, EvalReport};
pub use runner::{run_dataset, DatasetRun, ImageFailure, LabelsPerImage, RunOptions};
pub use synthetic::{SyntheticBenchmark, SyntheticConfig};
