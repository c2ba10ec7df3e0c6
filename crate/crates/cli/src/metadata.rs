//! Run metadata: everything needed to replay a run from caches.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use searchdet::raster::sha256_hex;
use searchdet::retrieval::{now_rfc3339, write_atomic, ExemplarSet};
use searchdet::Result;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct ManifestRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: &'static str,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub config_hash: String,
    pub config: RunConfig,
    pub seed: u64,
    pub embedding_backend: Option<String>,
    pub segmentation_backend: Option<String>,
    pub manifests: BTreeMap<String, ManifestRef>,
    /// sha256 of input files (images, annotation files).
    pub inputs: BTreeMap<String, String>,
    pub incomplete: bool,
}

impl RunMetadata {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            started_at: now_rfc3339(),
            finished_at: None,
            config_hash: config.hash(),
            config: config.clone(),
            seed: config.seed,
            embedding_backend: None,
            segmentation_backend: None,
            manifests: BTreeMap::new(),
            inputs: BTreeMap::new(),
            incomplete: false,
        }
    }

    pub fn backends(&mut self, embedding: &str, segmentation: &str) {
        self.embedding_backend = Some(embedding.to_string());
        self.segmentation_backend = Some(segmentation.to_string());
    }

    pub fn manifest(&mut self, set: &ExemplarSet, path: &Path) {
        self.manifests.insert(
            set.label().to_string(),
            ManifestRef {
                path: path.to_path_buf(),
                sha256: set.manifest().sha256(),
            },
        );
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| searchdet::Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(&mut self, out_dir: &Path) -> Result<()> {
        self.finished_at = Some(now_rfc3339());
        write_atomic(&out_dir.join("metadata.json"), &serde_json::to_vec_pretty(self)?)
    }
}
