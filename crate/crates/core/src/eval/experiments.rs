//! Ablation tables and exemplar-count stability studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coco::GroundTruth;
use super::metrics::{evaluate, EvalOptions, EvalReport};
use super::runner::{run_dataset, DatasetRun, RunOptions};
use super::synthetic::{SyntheticBenchmark, SyntheticConfig};
use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::pipeline::{PipelineParams, PreparedExemplars};
use crate::query::{cosine_similarity, PoolingMode};
use crate::raster::RasterImage;
use crate::regions::SegmentationBackend;
use crate::retrieval::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    PositivesOnly,
    NoHeatmap,
    MeanPooling,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::Full, Self::PositivesOnly, Self::NoHeatmap, Self::MeanPooling];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::PositivesOnly => "positives-only",
            Self::NoHeatmap => "no-heatmap",
            Self::MeanPooling => "mean-pooling",
        }
    }

    pub fn apply(self, base: &PipelineParams) -> PipelineParams {
        let mut p = *base;
        match self {
            Self::Full => {}
            Self::PositivesOnly => p.use_negatives = false,
            Self::NoHeatmap => p.use_heatmap = false,
            Self::MeanPooling => p.pooling = PoolingMode::Mean,
        }
        p
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Everything needed to run the detector over one dataset.
pub struct Workload<'a, F> {
    pub gt: &'a GroundTruth,
    pub exemplars: &'a BTreeMap<u64, PreparedExemplars>,
    pub load_image: F,
    pub embedder: &'a dyn EmbeddingBackend,
    pub segmenter: &'a dyn SegmentationBackend,
    pub run: RunOptions,
    pub eval: EvalOptions,
}

impl<F> Workload<'_, F>
where
    F: Fn(u64) -> Result<RasterImage> + Sync,
{
    pub fn evaluate(&self, params: &PipelineParams) -> Result<(DatasetRun, EvalReport)> {
        self.evaluate_with(self.exemplars, params)
    }

    fn evaluate_with(
        &self,
        exemplars: &BTreeMap<u64, PreparedExemplars>,
        params: &PipelineParams,
    ) -> Result<(DatasetRun, EvalReport)> {
        let run = run_dataset(
            self.gt,
            exemplars,
            &self.load_image,
            self.embedder,
            self.segmenter,
            params,
            &self.run,
        )?;
        let mut report = evaluate(&run.results, self.gt, &self.eval)?;
        report.incomplete = run.incomplete;
        Ok((run, report))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub map50: f64,
    pub map5095: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, ablation: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == ablation)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| setting | mAP@0.5 | mAP@[.5:.95] |\n|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.4} | {:.4} |", r.ablation.name(), r.map50, r.map5095);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(["setting", "map50", "map5095"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.ablation.name().to_string(),
                format!("{:.6}", r.map50),
                format!("{:.6}", r.map5095),
            ])
            .map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        write_atomic(path, &bytes)
    }
}

pub fn ablation_run<F>(work: &Workload<'_, F>, base: &PipelineParams, settings: &[Ablation]) -> Result<AblationTable>
where
    F: Fn(u64) -> Result<RasterImage> + Sync,
{
    let mut rows = Vec::with_capacity(settings.len());
    for &ablation in settings {
        let (_, report) = work.evaluate(&ablation.apply(base))?;
        rows.push(AblationRow {
            ablation,
            map50: report.map50,
            map5095: report.map5095,
            report,
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub count: usize,
    pub repeat: u64,
    pub map50: f64,
    pub map5095: f64,
}

/// mAP with the first `k` positives and `k` negatives for every `k` in `counts`.
pub fn exemplar_count_curve<F>(
    work: &Workload<'_, F>,
    params: &PipelineParams,
    counts: &[usize],
    repeat: u64,
) -> Result<Vec<StabilityPoint>>
where
    F: Fn(u64) -> Result<RasterImage> + Sync,
{
    let mut out = Vec::with_capacity(counts.len());
    for &k in counts {
        if k == 0 {
            return Err(Error::Config("exemplar counts start at 1".into()));
        }
        let subset: BTreeMap<u64, PreparedExemplars> =
            work.exemplars.iter().map(|(id, e)| (*id, e.truncated(k, k))).collect();
        let (_, report) = work.evaluate_with(&subset, params)?;
        out.push(StabilityPoint {
            count: k,
            repeat,
            map50: report.map50,
            map5095: report.map5095,
        });
    }
    Ok(out)
}

/// Square matrix of pairwise cosine similarities over the first `n_pos`
/// positives followed by the first `n_neg` negatives, averaged over labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub n_pos: usize,
    pub n_neg: usize,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Mean over the positive-positive, positive-negative and negative-negative blocks,
    /// excluding the diagonal.
    pub fn block_means(&self) -> (f64, f64, f64) {
        let (mut pp, mut pn, mut nn) = ((0.0, 0), (0.0, 0), (0.0, 0));
        let n = self.n_pos + self.n_neg;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let slot = match (i < self.n_pos, j < self.n_pos) {
                    (true, true) => &mut pp,
                    (false, false) => &mut nn,
                    _ => &mut pn,
                };
                slot.0 += self.values[i][j];
                slot.1 += 1;
            }
        }
        let m = |(s, c): (f64, usize)| if c == 0 { f64::NAN } else { s / c as f64 };
        (m(pp), m(pn), m(nn))
    }
}

pub fn similarity_matrix(exemplars: &[&PreparedExemplars]) -> Result<SimilarityMatrix> {
    if exemplars.is_empty() {
        return Err(Error::input("no labels to compare"));
    }
    let n_pos = exemplars.iter().map(|e| e.positive_globals.len()).min().unwrap_or(0);
    let n_neg = exemplars.iter().map(|e| e.negative_globals.len()).min().unwrap_or(0);
    let n = n_pos + n_neg;
    let mut values = vec![vec![0.0; n]; n];
    for e in exemplars {
        let vs: Vec<&[f64]> = e.positive_globals[..n_pos]
            .iter()
            .chain(&e.negative_globals[..n_neg])
            .map(Vec::as_slice)
            .collect();
        for i in 0..n {
            for j in 0..n {
                values[i][j] += cosine_similarity(vs[i], vs[j])?;
            }
        }
    }
    let count = exemplars.len() as f64;
    for row in &mut values {
        for v in row.iter_mut() {
            *v /= count;
        }
    }
    Ok(SimilarityMatrix {
        n_pos,
        n_neg,
        labels: exemplars.iter().map(|e| e.label.clone()).collect(),
        values,
    })
}

/// Synthetic-benchmark workload for one seed: every category gets its full
/// exemplar pool.
pub fn synthetic_exemplars(
    bench: &SyntheticBenchmark,
    backend: &dyn EmbeddingBackend,
) -> Result<BTreeMap<u64, PreparedExemplars>> {
    let n = bench.config.max_exemplars;
    bench
        .gt
        .categories
        .iter()
        .map(|(id, c)| Ok((*id, bench.prepare(&c.name, n, n, backend)?)))
        .collect()
}

/// Per-seed ablation tables over freshly generated synthetic benchmarks.
pub fn synthetic_ablation(
    config: &SyntheticConfig,
    seeds: &[u64],
    n_exemplars: usize,
    base: &PipelineParams,
    settings: &[Ablation],
) -> Result<Vec<AblationTable>> {
    seeds
        .iter()
        .map(|&seed| {
            let bench = SyntheticBenchmark::generate(config, seed)?;
            let embedder = bench.embedder()?;
            let segmenter = bench.segmenter();
            let exemplars: BTreeMap<u64, PreparedExemplars> = synthetic_exemplars(&bench, &embedder)?
                .into_iter()
                .map(|(id, e)| (id, e.truncated(n_exemplars, n_exemplars)))
                .collect();
            let work = Workload {
                gt: &bench.gt,
                exemplars: &exemplars,
                load_image: |id: u64| Ok(bench.scenes[&id].clone()),
                embedder: &embedder,
                segmenter: &segmenter,
                run: RunOptions::default(),
                eval: EvalOptions::default(),
            };
            ablation_run(&work, base, settings)
        })
        .collect()
}

/// Exemplar-count curves for every seed, flattened.
pub fn synthetic_stability(
    config: &SyntheticConfig,
    seeds: &[u64],
    counts: &[usize],
    params: &PipelineParams,
) -> Result<Vec<StabilityPoint>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let bench = SyntheticBenchmark::generate(config, seed)?;
        let embedder = bench.embedder()?;
        let segmenter = bench.segmenter();
        let exemplars = synthetic_exemplars(&bench, &embedder)?;
        let work = Workload {
            gt: &bench.gt,
            exemplars: &exemplars,
            load_image: |id: u64| Ok(bench.scenes[&id].clone()),
            embedder: &embedder,
            segmenter: &segmenter,
            run: RunOptions::default(),
            eval: EvalOptions::default(),
        };
        out.extend(exemplar_count_curve(&work, params, counts, seed)?);
    }
    Ok(out)
}

/// Mean mAP@0.5 per exemplar count.
pub fn mean_curve(points: &[StabilityPoint]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.count).or_default();
        e.0 += p.map50;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}
