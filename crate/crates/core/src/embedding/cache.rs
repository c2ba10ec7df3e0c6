use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Embedding, EmbeddingBackend, PatchGrid};
use crate::error::{Error, Result};
use crate::raster::{sha256_hex, BinaryMask, RasterImage};

#[derive(Clone, Serialize, Deserialize)]
enum Cached {
    Vector(Embedding),
    Grid {
        rows: usize,
        cols: usize,
        dim: usize,
        data: Vec<f64>,
        image_size: (u32, u32),
        patch_stride: u32,
    },
}

/// Content-addressed memo in front of another backend.
///
/// Keys hash `(backend id, image sha256, mask sha256 | "global" | "patch")`.
/// With a directory configured, entries are also persisted as JSON files.
pub struct CachedBackend<B> {
    inner: B,
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Cached>>,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: Option<PathBuf>) -> Self {
        Self {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn key(&self, image: &RasterImage, part: &str) -> String {
        sha256_hex(format!("{}\n{}\n{}", self.inner.id(), image.sha256(), part).as_bytes())
    }

    fn lookup(&self, key: &str) -> Option<Cached> {
        if let Some(v) = self.memory.lock().unwrap().get(key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let text = std::fs::read_to_string(path).ok()?;
        let v: Cached = serde_json::from_str(&text).ok()?;
        self.memory.lock().unwrap().insert(key.to_string(), v.clone());
        Some(v)
    }

    fn store(&self, key: &str, value: &Cached) -> Result<()> {
        self.memory.lock().unwrap().insert(key.to_string(), value.clone());
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{key}.json"));
            let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
            std::fs::write(&tmp, serde_json::to_vec(value)?).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn vector(&self, image: &RasterImage, part: &str, f: impl FnOnce() -> Result<Embedding>) -> Result<Embedding> {
        let key = self.key(image, part);
        if let Some(Cached::Vector(e)) = self.lookup(&key) {
            return Ok(e);
        }
        let e = f()?;
        self.store(&key, &Cached::Vector(e.clone()))?;
        Ok(e)
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_global(&self, image: &RasterImage) -> Result<Embedding> {
        self.vector(image, "global", || self.inner.embed_global(image))
    }

    fn embed_patches(&self, image: &RasterImage) -> Result<PatchGrid> {
        let key = self.key(image, "patch");
        if let Some(Cached::Grid {
            rows,
            cols,
            dim,
            data,
            image_size,
            patch_stride,
        }) = self.lookup(&key)
        {
            return PatchGrid::new(rows, cols, dim, data, image_size, patch_stride);
        }
        let g = self.inner.embed_patches(image)?;
        self.store(
            &key,
            &Cached::Grid {
                rows: g.rows(),
                cols: g.cols(),
                dim: g.dim(),
                data: g.vectors().flatten().copied().collect(),
                image_size: g.image_size,
                patch_stride: g.patch_stride,
            },
        )?;
        Ok(g)
    }

    fn embed_masked_region(&self, image: &RasterImage, mask: &BinaryMask) -> Result<Embedding> {
        super::check_region_mask(image, mask)?;
        self.vector(image, &mask.sha256(), || self.inner.embed_masked_region(image, mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{FixtureBackend, FixtureFile, FixtureGrid};
    use image::RgbImage;

    #[test]
    fn persisted_entries_survive_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = FixtureFile {
            dimension: 2,
            ..Default::default()
        };
        file.entries.insert("A".into(), vec![1.0, 2.0]);
        file.patch_grids
            .insert("A".into(), FixtureGrid::from_fn(1, 2, |_, c| vec![c as f64, 1.0]));
        let img = RasterImage::from_rgb("A", RgbImage::new(32, 32)).unwrap();

        let cached = CachedBackend::new(FixtureBackend::new(file).unwrap(), Some(dir.path().into()));
        let e = cached.embed_global(&img).unwrap();
        let g = cached.embed_patches(&img).unwrap();

        // an empty fixture would fail; the cache answers instead
        let empty = FixtureBackend::new(FixtureFile {
            dimension: 2,
            ..Default::default()
        })
        .unwrap();
        let warm = CachedBackend::new(empty, Some(dir.path().into()));
        assert_eq!(warm.embed_global(&img).unwrap(), e);
        assert_eq!(warm.embed_patches(&img).unwrap(), g);
    }
}
