//! Training-free open-vocabulary detection from web-retrieved exemplar images.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod heatmap;
pub mod pipeline;
pub mod query;
pub mod raster;
pub mod regions;
pub mod retrieval;
pub mod selection;
pub mod vector;

pub use error::{Error, ErrorKind, Result};
