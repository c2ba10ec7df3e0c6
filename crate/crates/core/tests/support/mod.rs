//! Straight-line reference implementations used as test oracles. Written
//! without touching the library so that agreement means something.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

pub fn random_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return v;
        }
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// `sum_i softmax(cos(query, x_i)) * x_i`, spelled out.
fn attention_sum(query: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
    let mut exps = Vec::new();
    for x in xs {
        exps.push(cos(query, x).exp());
    }
    let mut z = 0.0;
    for e in &exps {
        z += e;
    }
    let mut out = vec![0.0; query.len()];
    for (x, e) in xs.iter().zip(&exps) {
        for k in 0..out.len() {
            out[k] += e / z * x[k];
        }
    }
    out
}

/// Positive attention pool minus negative attention pool (zero without negatives).
pub fn adjusted_query(query: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> Vec<f64> {
    let a_pos = attention_sum(query, positives);
    let a_neg = if negatives.is_empty() {
        vec![0.0; query.len()]
    } else {
        attention_sum(query, negatives)
    };
    let mut q = vec![0.0; query.len()];
    for k in 0..q.len() {
        q[k] = a_pos[k] - a_neg[k];
    }
    q
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

#[derive(Debug, PartialEq, Eq)]
pub struct SelectionOutcome {
    pub candidates: BTreeSet<usize>,
    pub verified: BTreeSet<usize>,
}

/// Distance matrix on unit vectors, sort, chunk into bins of `m`, nominate
/// a mask when it fills strictly more than `dominance` of a bin, then accept
/// nominees whose mean distance over all queries is within `sigma` population
/// standard deviations of the mean pairwise query distance.
pub fn select(queries: &[Vec<f64>], regions: &[Vec<f64>], dominance: f64, sigma: f64) -> SelectionOutcome {
    let m = queries.len();
    let n = regions.len();
    let q: Vec<Vec<f64>> = queries.iter().map(|v| unit(v)).collect();
    let e: Vec<Vec<f64>> = regions.iter().map(|v| unit(v)).collect();
    let mut d = vec![vec![0.0; n]; m];
    let mut all = Vec::new();
    for i in 0..m {
        for j in 0..n {
            d[i][j] = dist(&q[i], &e[j]);
            all.push((d[i][j], j, i));
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut candidates = BTreeSet::new();
    for k in 0..n {
        let bin = &all[k * m..(k + 1) * m];
        let mut count: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, j, _) in bin {
            *count.entry(j).or_insert(0) += 1;
        }
        for (&j, &c) in &count {
            if c as f64 / m as f64 > dominance {
                candidates.insert(j);
            }
        }
    }

    let mut r = Vec::new();
    for i in 0..m {
        for k in i + 1..m {
            r.push(dist(&q[i], &q[k]));
        }
    }
    let (mu, sd) = if r.is_empty() {
        (0.0, 0.0)
    } else {
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / r.len() as f64;
        (mu, var.sqrt())
    };
    let mut verified = BTreeSet::new();
    for &j in &candidates {
        if m < 2 || sd == 0.0 {
            verified.insert(j);
            continue;
        }
        let mut mean = 0.0;
        for row in &d {
            mean += row[j];
        }
        mean /= m as f64;
        if (mean - mu).abs() <= sigma * sd {
            verified.insert(j);
        }
    }
    SelectionOutcome { candidates, verified }
}

pub struct PlantedInstance {
    pub queries: Vec<Vec<f64>>,
    pub regions: Vec<Vec<f64>>,
    pub planted: usize,
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let p: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    for (a, b) in v.iter_mut().zip(against) {
        *a -= p * b;
    }
}

/// `m` unit queries scattered over a disc of radius `eps / 2` around a
/// centre (so every pair lies within `eps`), the planted region at their
/// normalized centroid, and `distractors` unit vectors at least `10 eps` from
/// every query. The disc lies in a random plane through the centre: exemplar
/// variation spans few directions, and in high dimensions isotropic noise
/// makes every pairwise distance nearly identical.
pub fn planted_instance<R: Rng>(rng: &mut R, eps: f64, dim: usize, m: usize, distractors: usize) -> PlantedInstance {
    let centre = unit(&random_vec(rng, dim));
    let mut u = random_vec(rng, dim);
    orthogonalize(&mut u, &centre);
    let u = unit(&u);
    let mut w = random_vec(rng, dim);
    orthogonalize(&mut w, &centre);
    orthogonalize(&mut w, &u);
    let w = unit(&w);
    let near = |rng: &mut R| {
        let (a, b) = loop {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            if a * a + b * b <= 1.0 {
                break (a * eps / 2.0, b * eps / 2.0);
            }
        };
        let p: Vec<f64> = (0..dim).map(|k| centre[k] + a * u[k] + b * w[k]).collect();
        unit(&p)
    };
    let queries: Vec<Vec<f64>> = (0..m).map(|_| near(rng)).collect();
    let centroid = unit(
        &(0..dim)
            .map(|k| queries.iter().map(|q| q[k]).sum::<f64>())
            .collect::<Vec<_>>(),
    );
    let mut regions = Vec::new();
    while regions.len() < distractors {
        let p = unit(&random_vec(rng, dim));
        if queries.iter().all(|q| dist(q, &p) >= 10.0 * eps) {
            regions.push(p);
        }
    }
    let planted = rng.gen_range(0..=distractors);
    regions.insert(planted, centroid);
    PlantedInstance {
        queries,
        regions,
        planted,
    }
}

/// `[x, y, w, h]` boxes.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

#[derive(Debug, Clone)]
pub struct Det {
    pub image: u64,
    pub category: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Gt {
    pub image: u64,
    pub category: u64,
    pub bbox: [f64; 4],
}

fn rank_key(a: &Det, b: &Det) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.image.cmp(&b.image))
        .then(a.bbox.partial_cmp(&b.bbox).unwrap())
}

/// 101-point interpolated AP for one category at one IoU threshold, using
/// a single pass over all detections in rank order.
pub fn class_ap(dets: &[Det], gts: &[Gt], category: u64, threshold: f64) -> f64 {
    let gts: Vec<&Gt> = gts.iter().filter(|g| g.category == category).collect();
    if gts.is_empty() {
        return 0.0;
    }
    let mut ds: Vec<&Det> = dets.iter().filter(|d| d.category == category).collect();
    ds.sort_by(|a, b| rank_key(a, b));
    let mut used = vec![false; gts.len()];
    let mut tp = 0.0;
    let mut points = Vec::new();
    for (rank, d) in ds.iter().enumerate() {
        let mut best = None;
        let mut best_iou = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            if gt.image != d.image || used[g] {
                continue;
            }
            let v = iou(d.bbox, gt.bbox);
            if v >= threshold && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            used[g] = true;
            tp += 1.0;
        }
        points.push((tp / gts.len() as f64, tp / (rank + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let mut best: f64 = 0.0;
        for &(rec, prec) in &points {
            if rec >= r {
                best = best.max(prec);
            }
        }
        sum += best;
    }
    sum / 101.0
}
