//! Greedy IoU matching and interpolated average precision.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coco::GroundTruth;
use crate::error::{Error, Result};
use crate::grounding::CocoResult;
use crate::raster::BBox;
use crate::retrieval::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApInterpolation {
    /// Precision envelope sampled at recall 0, 0.01, ..., 1.
    #[default]
    Coco101,
    /// Exact area under the precision envelope.
    AllPoints,
}

/// `0.50, 0.55, ..., 0.95`
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Per-detection outcome at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched a crowd region; neither rewarded nor penalized.
    Ignored,
}

/// Greedy matching for one (image, category): detections in the given order
/// claim the unmatched non-crowd box with the highest IoU at or above
/// `threshold`. Unclaimed detections overlapping a crowd box are ignored.
pub fn match_detections(dets: &[BBox], gts: &[(BBox, bool)], threshold: f64) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, (gb, crowd)) in gts.iter().enumerate() {
                if *crowd || taken[g] {
                    continue;
                }
                let iou = d.iou(gb);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                return MatchOutcome::TruePositive;
            }
            if gts.iter().any(|(gb, crowd)| *crowd && d.iou(gb) >= threshold) {
                MatchOutcome::Ignored
            } else {
                MatchOutcome::FalsePositive
            }
        })
        .collect()
}

/// Precision/recall after each detection in ranked order (ignored ones dropped).
pub fn pr_curve(ranked_tp: &[bool], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked_tp
        .iter()
        .enumerate()
        .map(|(i, &is_tp)| {
            tp += is_tp as usize;
            (tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

pub fn average_precision(ranked_tp: &[bool], n_gt: usize, interpolation: ApInterpolation) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let curve = pr_curve(ranked_tp, n_gt);
    let recall: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let mut precision: Vec<f64> = curve.iter().map(|c| c.1).collect();
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interpolation {
        ApInterpolation::Coco101 => {
            let mut sum = 0.0;
            for k in 0..=100 {
                let r = k as f64 / 100.0;
                let idx = recall.partition_point(|&x| x < r);
                if idx < precision.len() {
                    sum += precision[idx];
                }
            }
            sum / 101.0
        }
        ApInterpolation::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub num_gt: usize,
    pub num_detections: usize,
    /// AP at each threshold, same order as the report's thresholds.
    pub ap: Vec<f64>,
    pub ap50: f64,
    pub ap5095: f64,
    pub counts: Vec<Counts>,
    /// `[recall, precision]` at IoU 0.5, in rank order.
    pub pr_curve50: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub interpolation: ApInterpolation,
    pub max_dets: usize,
    pub per_class: BTreeMap<u64, ClassReport>,
    pub map50: f64,
    pub map5095: f64,
    /// Set when the run was interrupted and not every image was processed.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    pub max_dets: usize,
    pub interpolation: ApInterpolation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: coco_thresholds(),
            max_dets: 100,
            interpolation: ApInterpolation::Coco101,
        }
    }
}

/// Score descending, then box, so ties never depend on list order.
fn rank_order(a: &CocoResult, b: &CocoResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then_with(|| {
            a.bbox
                .iter()
                .zip(&b.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

pub fn evaluate(detections: &[CocoResult], gt: &GroundTruth, options: &EvalOptions) -> Result<EvalReport> {
    let mut problems = Vec::new();
    for d in detections {
        if !gt.images.contains_key(&d.image_id) {
            problems.push(format!("detection references unknown image {}", d.image_id));
        }
        if !gt.categories.contains_key(&d.category_id) {
            problems.push(format!("detection references unknown category {}", d.category_id));
        }
        if !d.score.is_finite() {
            problems.push(format!("detection on image {} has a non-finite score", d.image_id));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if options.thresholds.is_empty() {
        return Err(Error::Config("at least one IoU threshold is required".into()));
    }

    let mut gts: HashMap<(u64, u64), Vec<(BBox, bool)>> = HashMap::new();
    for a in &gt.annotations {
        gts.entry((a.image_id, a.category_id))
            .or_default()
            .push((a.bbox(), a.is_crowd()));
    }
    let mut dets: HashMap<(u64, u64), Vec<&CocoResult>> = HashMap::new();
    for d in detections {
        dets.entry((d.image_id, d.category_id)).or_default().push(d);
    }
    for list in dets.values_mut() {
        list.sort_by(|a, b| rank_order(a, b));
        list.truncate(options.max_dets);
    }

    let mut per_class = BTreeMap::new();
    for (&cat, category) in &gt.categories {
        let num_gt = gt
            .annotations
            .iter()
            .filter(|a| a.category_id == cat && !a.is_crowd())
            .count();
        let mut ap = Vec::with_capacity(options.thresholds.len());
        let mut counts = Vec::new();
        let mut pr_curve50 = Vec::new();
        let mut num_detections = 0;
        for &t in &options.thresholds {
            let mut scored: Vec<(&CocoResult, bool)> = Vec::new();
            for (&(img, c), list) in &dets {
                if c != cat {
                    continue;
                }
                let boxes: Vec<BBox> = list.iter().map(|d| BBox::from_xywh(d.bbox)).collect();
                let empty = Vec::new();
                let g = gts.get(&(img, cat)).unwrap_or(&empty);
                for (d, outcome) in list.iter().zip(match_detections(&boxes, g, t)) {
                    match outcome {
                        MatchOutcome::TruePositive => scored.push((d, true)),
                        MatchOutcome::FalsePositive => scored.push((d, false)),
                        MatchOutcome::Ignored => {}
                    }
                }
            }
            scored.sort_by(|a, b| rank_order(a.0, b.0));
            let ranked: Vec<bool> = scored.iter().map(|s| s.1).collect();
            let tp = ranked.iter().filter(|x| **x).count();
            num_detections = num_detections.max(ranked.len());
            counts.push(Counts {
                threshold: t,
                tp,
                fp: ranked.len() - tp,
                false_negatives: num_gt - tp,
            });
            ap.push(average_precision(&ranked, num_gt, options.interpolation));
            if (t - 0.5).abs() < 1e-12 && num_gt > 0 {
                pr_curve50 = pr_curve(&ranked, num_gt).into_iter().map(|(r, p)| [r, p]).collect();
            }
        }
        let ap50 = options
            .thresholds
            .iter()
            .position(|t| (t - 0.5).abs() < 1e-12)
            .map(|i| ap[i])
            .unwrap_or(f64::NAN);
        let ap5095 = ap.iter().sum::<f64>() / ap.len() as f64;
        per_class.insert(
            cat,
            ClassReport {
                name: category.name.clone(),
                num_gt,
                num_detections,
                ap,
                ap50,
                ap5095,
                counts,
                pr_curve50,
            },
        );
    }
    let scored: Vec<&ClassReport> = per_class.values().filter(|c| c.num_gt > 0).collect();
    let mean = |f: fn(&ClassReport) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| f(c)).sum::<f64>() / scored.len() as f64
        }
    };
    let map50 = mean(|c| if c.ap50.is_nan() { 0.0 } else { c.ap50 });
    let map5095 = mean(|c| c.ap5095);
    Ok(EvalReport {
        thresholds: options.thresholds.clone(),
        interpolation: options.interpolation,
        max_dets: options.max_dets,
        per_class,
        map50,
        map5095,
        incomplete: false,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(["category_id", "name", "num_gt", "num_detections", "ap50", "ap5095"])
            .map_err(io)?;
        for (id, c) in &self.per_class {
            w.write_record([
                id.to_string(),
                c.name.clone(),
                c.num_gt.to_string(),
                c.num_detections.to_string(),
                format!("{:.6}", c.ap50),
                format!("{:.6}", c.ap5095),
            ])
            .map_err(io)?;
        }
        w.write_record([
            "all".to_string(),
            "mean".to_string(),
            String::new(),
            String::new(),
            format!("{:.6}", self.map50),
            format!("{:.6}", self.map5095),
        ])
        .map_err(io)?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        write_atomic(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_walked_curve() {
        // 2 GT; TP .9, FP .8, TP .7
        let ranked = [true, false, true];
        let all = average_precision(&ranked, 2, ApInterpolation::AllPoints);
        assert!((all - 5.0 / 6.0).abs() < 1e-12);
        let coco = average_precision(&ranked, 2, ApInterpolation::Coco101);
        assert!((coco - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(average_precision(&[true], 1, ApInterpolation::Coco101), 1.0);
        assert_eq!(average_precision(&[], 1, ApInterpolation::Coco101), 0.0);
        assert_eq!(average_precision(&[false, false], 3, ApInterpolation::AllPoints), 0.0);
    }

    #[test]
    fn greedy_matching_takes_best_free_box() {
        let gts = [
            (BBox::new(0.0, 0.0, 10.0, 10.0), false),
            (BBox::new(0.0, 0.0, 10.0, 9.0), false),
        ];
        let dets = [
            BBox::new(0.0, 0.0, 10.0, 9.0),
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(50.0, 50.0, 60.0, 60.0),
        ];
        let out = match_detections(&dets, &gts, 0.5);
        assert_eq!(
            out,
            [
                MatchOutcome::TruePositive,
                MatchOutcome::TruePositive,
                MatchOutcome::FalsePositive
            ]
        );
        let crowd = [(BBox::new(0.0, 0.0, 10.0, 10.0), true)];
        assert_eq!(match_detections(&dets[..1], &crowd, 0.5), [MatchOutcome::Ignored]);
    }

    #[test]
    fn thresholds_are_exact_decimals() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[1], 0.55);
        assert_eq!(t[9], 0.95);
    }
}
