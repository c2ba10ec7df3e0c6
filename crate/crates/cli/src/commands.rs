use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use serde::Serialize;

use searchdet::eval::experiments::{
    ablation_run, exemplar_count_curve, mean_curve, similarity_matrix, synthetic_ablation, synthetic_stability,
    write_json, Ablation, AblationTable, StabilityPoint, Workload,
};
use searchdet::eval::stats::{sign_test, spearman, SignTest};
use searchdet::eval::{
    load_ground_truth, plots, EvalOptions, GroundTruth, LabelsPerImage, RunOptions, SyntheticBenchmark, SyntheticConfig,
};
use searchdet::heatmap::overlay;
use searchdet::pipeline::{detect as run_detect, prepare_exemplars, PreparedExemplars};
use searchdet::raster::{BBox, RasterImage};
use searchdet::retrieval::{pin_manifest, write_atomic, ExemplarFetcher, LabelQuery};

use crate::config::RunConfig;
use crate::metadata::RunMetadata;
use crate::setup::{exemplar_cache, exemplars_for, fetcher, manifest_path, Backends, ContextHints};
use crate::{
    AblateArgs, CacheAction, CacheArgs, DatasetArgs, DetectArgs, EvalArgs, Interrupted, RetrieveArgs, StabilityArgs,
    SynthArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn retrieve(args: &RetrieveArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let fetcher = fetcher(&cfg)?;
    let query = LabelQuery::new(&args.label, args.context_hint.as_deref())?;
    let set = fetcher.fetch_exemplars(&query, cfg.n_pos, cfg.n_neg)?;
    let path = args
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path(&args.out_dir.join("manifests"), &args.label));
    pin_manifest(&set, &path)?;
    println!(
        "{}: {} positives, {} negatives ({}) -> {}",
        set.label(),
        set.positives().len(),
        set.negatives().len(),
        set.negative_queries().join(", "),
        path.display()
    );
    Ok(())
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let mut meta = RunMetadata::start("detect", &cfg);
    let backends = Backends::build(&cfg)?;
    meta.backends(backends.embedder.id(), backends.segmenter.id());
    create_dir(&args.out_dir)?;

    let image = RasterImage::open(&args.image)?;
    meta.input(&args.image)?;
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path(&args.out_dir.join("manifests"), &args.label));
    let set = exemplars_for(&cfg, &args.label, args.context_hint.as_deref(), &manifest, &mut None)?;
    meta.manifest(&set, &manifest);
    let prepared = prepare_exemplars(&set, &*backends.embedder)?;
    let out = run_detect(
        &image,
        &prepared,
        &*backends.embedder,
        &*backends.segmenter,
        &cfg.pipeline_params(),
    )?;

    let records: Vec<_> = out.detections.iter().map(|d| d.record()).collect();
    write_json(&records, &args.out_dir.join("detections.json"))?;
    if let Some(trace) = &out.selection {
        write_json(trace, &args.out_dir.join("selection.json"))?;
    }
    if args.overlay {
        let mut canvas = match &out.heatmap {
            Some(h) => overlay(&image, h, 0.45)?,
            None => image.pixels().clone(),
        };
        for d in &out.detections {
            draw_box(&mut canvas, &d.bbox, Rgb([0, 255, 0]));
        }
        canvas
            .save(args.out_dir.join("overlay.png"))
            .context("writing overlay.png")?;
    }
    meta.finish(&args.out_dir)?;

    println!(
        "{} detections of {:?} from {} regions",
        records.len(),
        args.label,
        out.region_count
    );
    for r in &records {
        let [x, y, w, h] = r.bbox.to_xywh();
        println!("  {:.3}  [{x:.0}, {y:.0}, {w:.0}, {h:.0}]", r.score);
    }
    Ok(())
}

fn draw_box(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let clamp = |v: f64, hi: u32| (v.max(0.0) as u32).min(hi - 1);
    let (x0, y0) = (clamp(b.x_min, w), clamp(b.y_min, h));
    let (x1, y1) = (clamp(b.x_max - 1.0, w), clamp(b.y_max - 1.0, h));
    for x in x0..=x1 {
        img.put_pixel(x, y0, color);
        img.put_pixel(x, y1, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, color);
        img.put_pixel(x1, y, color);
    }
}

/// A COCO dataset on disk with exemplars prepared for each category.
struct Dataset {
    gt: GroundTruth,
    images: PathBuf,
    exemplars: BTreeMap<u64, PreparedExemplars>,
}

impl Dataset {
    fn load(
        data: &DatasetArgs,
        cfg: &RunConfig,
        backends: &Backends,
        out_dir: &Path,
        meta: &mut RunMetadata,
    ) -> Result<Self> {
        let path = data
            .dataset
            .as_ref()
            .ok_or_else(|| searchdet::Error::Config("--dataset is required without --synthetic".into()))?;
        let gt = load_ground_truth(path)?;
        meta.input(path)?;
        let images = match &data.images {
            Some(dir) => dir.clone(),
            None => path.parent().unwrap_or(Path::new(".")).join("images"),
        };
        let manifests = data.manifest.clone().unwrap_or_else(|| out_dir.join("manifests"));
        let hints = ContextHints::load(data.context_hints.as_deref())?;
        let mut fetcher: Option<ExemplarFetcher> = None;
        let mut exemplars = BTreeMap::new();
        for (id, cat) in &gt.categories {
            let manifest = manifest_path(&manifests, &cat.name);
            let set = exemplars_for(cfg, &cat.name, hints.get(&cat.name), &manifest, &mut fetcher)
                .with_context(|| format!("exemplars for {:?}", cat.name))?;
            meta.manifest(&set, &manifest);
            exemplars.insert(*id, prepare_exemplars(&set, &*backends.embedder)?);
        }
        Ok(Self { gt, images, exemplars })
    }

    fn workload<'a>(
        &'a self,
        backends: &'a Backends,
        run: RunOptions,
    ) -> Workload<'a, impl Fn(u64) -> searchdet::Result<RasterImage> + Sync + 'a> {
        Workload {
            gt: &self.gt,
            exemplars: &self.exemplars,
            load_image: move |id: u64| {
                let info = self
                    .gt
                    .images
                    .get(&id)
                    .ok_or_else(|| searchdet::Error::Input(format!("unknown image id {id}")))?;
                RasterImage::open(self.images.join(&info.file_name))
            },
            embedder: &*backends.embedder,
            segmenter: &*backends.segmenter,
            run,
            eval: EvalOptions::default(),
        }
    }
}

fn run_options(cfg: &RunConfig, data: &DatasetArgs, interrupt: &Arc<AtomicBool>) -> RunOptions {
    RunOptions {
        workers: cfg.workers,
        labels_per_image: if data.present_only {
            LabelsPerImage::Present
        } else {
            cfg.labels_per_image
        },
        interrupt: Some(interrupt.clone()),
    }
}

fn parse_ablations(list: &str) -> Result<Vec<Ablation>> {
    if list.trim() == "all" {
        return Ok(Ablation::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let a: Ablation = name.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(searchdet::Error::Config("no ablation selected".into()).into());
    }
    Ok(out)
}

fn finish(meta: &mut RunMetadata, out_dir: &Path, interrupt: &AtomicBool) -> Result<()> {
    meta.incomplete |= interrupt.load(Ordering::SeqCst);
    meta.finish(out_dir)?;
    if meta.incomplete {
        return Err(Interrupted.into());
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, interrupt: &Arc<AtomicBool>) -> Result<()> {
    if let Some(list) = &args.ablate {
        return ablate(
            &AblateArgs {
                data: args.data.clone(),
                ablate: list.clone(),
                synthetic: false,
                repeats: 1,
                out_dir: args.out_dir.clone(),
                config: args.config.clone(),
            },
            interrupt,
        );
    }
    let cfg = args.config.resolve()?;
    let mut meta = RunMetadata::start("eval", &cfg);
    let backends = Backends::build(&cfg)?;
    meta.backends(backends.embedder.id(), backends.segmenter.id());
    create_dir(&args.out_dir)?;
    let data = Dataset::load(&args.data, &cfg, &backends, &args.out_dir, &mut meta)?;
    let work = data.workload(&backends, run_options(&cfg, &args.data, interrupt));
    let (run, report) = work.evaluate(&cfg.pipeline_params())?;

    let out = &args.out_dir;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    write_json(&run.results, &out.join("detections.json"))?;
    write_json(&run.failures, &out.join("failures.json"))?;
    plots::pr_curves(&report, &out.join("pr_curves.svg"))?;
    let prepared: Vec<&PreparedExemplars> = data.exemplars.values().collect();
    match similarity_matrix(&prepared) {
        Ok(m) => {
            write_json(&m, &out.join("similarity.json"))?;
            plots::similarity_matrix(&m, &out.join("similarity.svg"))?;
        }
        Err(e) => log::warn!("skipping exemplar similarity matrix: {e}"),
    }

    println!("images processed: {}/{}", run.processed, data.gt.images.len());
    if !run.failures.is_empty() {
        println!("images failed: {} (see failures.json)", run.failures.len());
    }
    for (id, class) in &report.per_class {
        let name = &data.gt.categories[id].name;
        println!("  {name:<20} AP50 {:.4}  AP {:.4}", class.ap50, class.ap5095);
    }
    println!("mAP@0.5 {:.4}  mAP@[.5:.95] {:.4}", report.map50, report.map5095);
    meta.incomplete = report.incomplete;
    finish(&mut meta, out, interrupt)
}

#[derive(Serialize)]
struct AblationSummary {
    ablation: Ablation,
    mean_map50: f64,
    mean_map5095: f64,
    /// Full method against this setting, paired by seed.
    full_beats_this: Option<SignTest>,
}

fn summarize(tables: &[AblationTable], settings: &[Ablation]) -> Vec<AblationSummary> {
    let column = |a: Ablation| -> Vec<f64> { tables.iter().filter_map(|t| t.row(a)).map(|r| r.map50).collect() };
    let full = column(Ablation::Full);
    settings
        .iter()
        .map(|&a| {
            let col = column(a);
            let strict: Vec<f64> = tables.iter().filter_map(|t| t.row(a)).map(|r| r.map5095).collect();
            AblationSummary {
                ablation: a,
                mean_map50: mean(&col),
                mean_map5095: mean(&strict),
                full_beats_this: (a != Ablation::Full && full.len() == col.len() && !full.is_empty())
                    .then(|| sign_test(&full, &col)),
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Generation is pinned to the default pool so a seed names the same
/// benchmark whatever exemplar count is evaluated.
fn synthetic_config(n: usize) -> SyntheticConfig {
    let base = SyntheticConfig::default();
    SyntheticConfig {
        max_exemplars: base.max_exemplars.max(n),
        ..base
    }
}

pub fn ablate(args: &AblateArgs, interrupt: &Arc<AtomicBool>) -> Result<()> {
    let cfg = args.config.resolve()?;
    let settings = parse_ablations(&args.ablate)?;
    let mut meta = RunMetadata::start("ablate", &cfg);
    create_dir(&args.out_dir)?;
    let out = &args.out_dir;
    let params = cfg.pipeline_params();

    if args.synthetic {
        if args.repeats == 0 {
            return Err(searchdet::Error::Config("--repeats must be at least 1".into()).into());
        }
        let seeds: Vec<u64> = (cfg.seed..cfg.seed + args.repeats).collect();
        let n = cfg.n_pos.max(cfg.n_neg);
        let tables = synthetic_ablation(&synthetic_config(n), &seeds, n, &params, &settings)?;
        meta.backends("synthetic-fixture", "synthetic-fixture");
        let summary = summarize(&tables, &settings);
        write_json(&tables, &out.join("ablation_tables.json"))?;
        write_json(&summary, &out.join("ablation_summary.json"))?;
        println!("{} synthetic seeds from {}", seeds.len(), cfg.seed);
        println!("| setting | mean mAP@0.5 | mean mAP@[.5:.95] | full wins/losses/ties | p |");
        println!("|---|---|---|---|---|");
        for s in &summary {
            let test = s
                .full_beats_this
                .map(|t| {
                    (
                        format!("{}/{}/{}", t.wins, t.losses, t.ties),
                        format!("{:.4}", t.p_value),
                    )
                })
                .unwrap_or_else(|| ("-".into(), "-".into()));
            println!(
                "| {} | {:.4} | {:.4} | {} | {} |",
                s.ablation.name(),
                s.mean_map50,
                s.mean_map5095,
                test.0,
                test.1
            );
        }
        return finish(&mut meta, out, interrupt);
    }

    let backends = Backends::build(&cfg)?;
    meta.backends(backends.embedder.id(), backends.segmenter.id());
    let data = Dataset::load(&args.data, &cfg, &backends, out, &mut meta)?;
    let work = data.workload(&backends, run_options(&cfg, &args.data, interrupt));
    let table = ablation_run(&work, &params, &settings)?;
    let markdown = table.to_markdown();
    write_atomic(&out.join("ablation.md"), markdown.as_bytes())?;
    table.write_csv(&out.join("ablation.csv"))?;
    write_json(&table, &out.join("ablation.json"))?;
    print!("{markdown}");
    meta.incomplete = table.rows.iter().any(|r| r.report.incomplete);
    finish(&mut meta, out, interrupt)
}

#[derive(Serialize)]
struct StabilityReport {
    points: Vec<StabilityPoint>,
    mean_curve: Vec<(usize, f64)>,
    /// Rank correlation between exemplar count and mean mAP@0.5.
    spearman: f64,
}

pub fn stability(args: &StabilityArgs, interrupt: &Arc<AtomicBool>) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if args.max_count == 0 {
        return Err(searchdet::Error::Config("--max-count must be at least 1".into()).into());
    }
    cfg.n_pos = args.max_count;
    cfg.n_neg = args.max_count;
    cfg.validate()?;
    let counts: Vec<usize> = (1..=args.max_count).collect();
    let mut meta = RunMetadata::start("stability", &cfg);
    create_dir(&args.out_dir)?;
    let out = &args.out_dir;
    let params = cfg.pipeline_params();

    let points = if args.synthetic {
        if args.repeats == 0 {
            return Err(searchdet::Error::Config("--repeats must be at least 1".into()).into());
        }
        let seeds: Vec<u64> = (cfg.seed..cfg.seed + args.repeats).collect();
        meta.backends("synthetic-fixture", "synthetic-fixture");
        synthetic_stability(&synthetic_config(args.max_count), &seeds, &counts, &params)?
    } else {
        let backends = Backends::build(&cfg)?;
        meta.backends(backends.embedder.id(), backends.segmenter.id());
        let data = Dataset::load(&args.data, &cfg, &backends, out, &mut meta)?;
        let work = data.workload(&backends, run_options(&cfg, &args.data, interrupt));
        exemplar_count_curve(&work, &params, &counts, 0)?
    };

    let curve = mean_curve(&points);
    let xs: Vec<f64> = curve.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|(_, m)| *m).collect();
    let report = StabilityReport {
        spearman: spearman(&xs, &ys),
        mean_curve: curve,
        points,
    };
    write_json(&report, &out.join("stability.json"))?;
    plots::stability_curve(&report.points, &out.join("stability.svg"))?;
    for (k, m) in &report.mean_curve {
        println!("  {k:>3} exemplars  mAP@0.5 {m:.4}");
    }
    println!("spearman(count, mAP@0.5) = {:.3}", report.spearman);
    finish(&mut meta, out, interrupt)
}

pub fn cache(args: &CacheArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let cache = exemplar_cache(&cfg);
    match args.action {
        CacheAction::Inspect => {
            let records = cache.list()?;
            println!("{} cached queries in {}", records.len(), cfg.cache_dir.display());
            for r in records {
                println!(
                    "  {:<30} {:>3} images  {}  {}{}",
                    r.query,
                    r.entries.len(),
                    r.engine,
                    r.fetched_at,
                    if r.exhausted { "  (exhausted)" } else { "" }
                );
            }
        }
        CacheAction::Clear => {
            let n = cache.clear()?;
            println!("removed {n} entries from {}", cfg.cache_dir.display());
        }
    }
    Ok(())
}

const SYNTH_CONFIG: &str = r#"backend = "fixture"
fixture_embeddings = "embeddings.json"
fixture_masks = "masks"
engine_dir = "engine"
cache_dir = "cache"
"#;

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        present_per_class: args.present,
        lookalike_per_class: args.lookalike,
        max_exemplars: args.exemplars,
        ..SyntheticConfig::default()
    };
    let bench = SyntheticBenchmark::generate(&config, args.seed)?;
    bench.write_to(&args.out_dir)?;
    write_atomic(&args.out_dir.join("searchdet.toml"), SYNTH_CONFIG.as_bytes())?;
    let dir = args.out_dir.display();
    println!(
        "wrote {} scenes over {} classes to {dir}",
        bench.gt.images.len(),
        bench.gt.categories.len()
    );
    println!("evaluate with:");
    println!("  searchdet eval --config {dir}/searchdet.toml --dataset {dir}/annotations.json --out-dir {dir}/run");
    Ok(())
}
