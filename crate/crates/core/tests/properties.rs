mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use searchdet::embedding::{Embedding, EmbeddingKind};
use searchdet::eval::{evaluate, Annotation, Category, EvalOptions, GroundTruth, ImageInfo};
use searchdet::grounding::{dedupe, ground, CocoResult, GroundingParams};
use searchdet::heatmap::{binarize, HeatmapValues};
use searchdet::query::{adjusted_query, attention_weights, pool, PoolingMode};
use searchdet::raster::BinaryMask;
use searchdet::regions::{EmbeddedRegion, RegionMask};
use searchdet::selection::{select_masks, SelectionParams};

fn vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| support::random_vec(rng, dim)).collect()
}

fn selected(queries: &[Vec<f64>], regions: &[Vec<f64>]) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let trace = select_masks(queries, regions, &SelectionParams::default()).unwrap();
    let candidates = trace.result.candidates.iter().map(|c| c.mask).collect();
    let verified = trace.result.verified.iter().copied().collect();
    (candidates, verified)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn selection_sets_nest(seed in any::<u64>(), m in 1usize..7, n in 1usize..13, dim in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = vectors(&mut rng, m, dim);
        let r = vectors(&mut rng, n, dim);
        let (candidates, verified) = selected(&q, &r);
        prop_assert!(verified.is_subset(&candidates));
        prop_assert!(candidates.iter().all(|&j| j < n));
    }

    #[test]
    fn selection_ignores_mask_order(seed in any::<u64>(), m in 1usize..7, n in 1usize..13, dim in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = vectors(&mut rng, m, dim);
        let r = vectors(&mut rng, n, dim);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&j| r[j].clone()).collect();
        let (c0, v0) = selected(&q, &r);
        let (c1, v1) = selected(&q, &shuffled);
        let back = |s: BTreeSet<usize>| s.into_iter().map(|j| order[j]).collect::<BTreeSet<_>>();
        prop_assert_eq!(back(c1), c0);
        prop_assert_eq!(back(v1), v0);
    }

    #[test]
    fn selection_matches_reference(seed in any::<u64>(), m in 1usize..7, n in 1usize..13, dim in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = vectors(&mut rng, m, dim);
        let r = vectors(&mut rng, n, dim);
        let (candidates, verified) = selected(&q, &r);
        let expected = support::select(&q, &r, 0.8, 3.0);
        prop_assert_eq!(candidates, expected.candidates);
        prop_assert_eq!(verified, expected.verified);
    }

    #[test]
    fn far_regions_are_never_verified(seed in any::<u64>(), m in 3usize..7, n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 8;
        // queries spread over the first half of the axes, regions on the rest
        let q: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut v = vec![0.0; dim];
                v[0] = 1.0;
                for x in &mut v[1..4] {
                    *x = rng.gen_range(-0.3..0.3);
                }
                v
            })
            .collect();
        let r: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v = vec![0.0; dim];
                v[4] = 1.0;
                for x in &mut v[5..] {
                    *x = rng.gen_range(-0.3..0.3);
                }
                v
            })
            .collect();
        let trace = select_masks(&q, &r, &SelectionParams::default()).unwrap();
        let reference = &trace.reference;
        prop_assume!(reference.std > 0.0);
        let far = trace
            .result
            .per_mask_mean
            .values()
            .all(|mu| mu - reference.mean > 3.0 * reference.std);
        prop_assume!(far);
        prop_assert!(trace.result.verified.is_empty());
    }

    #[test]
    fn softmax_sums_to_one(sims in proptest::collection::vec(-1.0f64..1.0, 1..40)) {
        let w = attention_weights(&sims).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn attention_ignores_input_scale(seed in any::<u64>(), n in 1usize..8, dim in 2usize..17, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = support::random_vec(&mut rng, dim);
        let xs = vectors(&mut rng, n, dim);
        let scaled: Vec<Vec<f64>> = xs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let scaled_query: Vec<f64> = query.iter().map(|x| x * scale).collect();
        let a = adjusted_query(&query, &xs, &Vec::<Vec<f64>>::new(), PoolingMode::Attention).unwrap();
        let b = adjusted_query(&scaled_query, &scaled, &Vec::<Vec<f64>>::new(), PoolingMode::Attention).unwrap();
        for (x, y) in a.positive_weights.iter().zip(&b.positive_weights) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_similarities_reduce_to_mean(seed in any::<u64>(), n in 1usize..8, dim in 3usize..12) {
        // every exemplar shares the same component along the query and differs
        // only orthogonally to it with equal norm, so all cosines coincide
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut query = vec![0.0; dim];
        query[0] = 1.0;
        let radius = rng.gen_range(0.1..2.0);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v = support::random_vec(&mut rng, dim - 1);
                let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x *= radius / len);
                let mut out = vec![0.7];
                out.extend(v);
                out
            })
            .collect();
        let pooled = pool(&query, &xs, PoolingMode::Attention).unwrap();
        for k in 0..dim {
            let mean = xs.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            prop_assert!((pooled[k] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn query_matches_reference(seed in any::<u64>(), dim in 1usize..17, n_pos in 1usize..9, n_neg in 0usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = support::random_vec(&mut rng, dim);
        let pos = vectors(&mut rng, n_pos, dim);
        let neg = vectors(&mut rng, n_neg, dim);
        let got = adjusted_query(&query, &pos, &neg, PoolingMode::Attention).unwrap().vector;
        let want = support::adjusted_query(&query, &pos, &neg);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

const SIDE: u32 = 24;

fn region(rng: &mut ChaCha8Rng, dim: usize, i: usize) -> EmbeddedRegion {
    let x0 = rng.gen_range(0..SIDE - 2);
    let y0 = rng.gen_range(0..SIDE - 2);
    let x1 = rng.gen_range(x0 + 1..=SIDE);
    let y1 = rng.gen_range(y0 + 1..=SIDE);
    let mask = BinaryMask::rect(SIDE, SIDE, x0, y0, x1, y1);
    EmbeddedRegion {
        region: RegionMask::new(mask, None).unwrap(),
        embedding: Embedding::new(support::random_vec(rng, dim), EmbeddingKind::Region, format!("r{i}")).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grounding_invariants(seed in any::<u64>(), n in 0usize..10, quantile in 0.05f64..0.95, iou in 0.3f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let regions: Vec<EmbeddedRegion> = (0..n).map(|i| region(&mut rng, dim, i)).collect();
        let values: Vec<f64> = (0..SIDE * SIDE).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hm = binarize(HeatmapValues::from_vec(SIDE, SIDE, values).unwrap(), quantile).unwrap();
        let query = support::random_vec(&mut rng, dim);
        let params = GroundingParams { dedupe_iou: iou };
        let dets = ground(&regions, Some(&hm), &query, "thing", &params).unwrap();

        prop_assert!(dets.len() <= regions.len());
        for d in &dets {
            let (x0, y0) = (d.bbox.x_min as u32, d.bbox.y_min as u32);
            let (x1, y1) = (d.bbox.x_max as u32, d.bbox.y_max as u32);
            let hit = (y0..y1).any(|y| (x0..x1).any(|x| hm.binary.get(x, y)));
            prop_assert!(hit);
            prop_assert!((0.0..=1.0).contains(&d.score));
        }
        prop_assert_eq!(dedupe(dets.clone(), iou), dets);
    }
}

fn scene_gt(boxes: &[(u64, [f64; 4])]) -> GroundTruth {
    GroundTruth {
        images: (1..=3)
            .map(|id| {
                (
                    id,
                    ImageInfo {
                        id,
                        file_name: format!("{id}.png"),
                        width: 100,
                        height: 100,
                    },
                )
            })
            .collect(),
        annotations: boxes
            .iter()
            .enumerate()
            .map(|(i, &(image_id, bbox))| Annotation {
                id: i as u64 + 1,
                image_id,
                category_id: 1,
                bbox,
                iscrowd: 0,
                area: None,
                segmentation: None,
            })
            .collect(),
        categories: [(
            1,
            Category {
                id: 1,
                name: "thing".into(),
            },
        )]
        .into_iter()
        .collect(),
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x = rng.gen_range(0.0..60.0);
    let y = rng.gen_range(0.0..60.0);
    [x, y, rng.gen_range(5.0..40.0), rng.gen_range(5.0..40.0)]
}

fn random_dets(rng: &mut ChaCha8Rng, gts: &[(u64, [f64; 4])], n: usize) -> Vec<CocoResult> {
    (0..n)
        .map(|_| {
            let (image_id, bbox) = if !gts.is_empty() && rng.gen_bool(0.6) {
                let (img, b) = gts[rng.gen_range(0..gts.len())];
                let j = |v: f64, rng: &mut ChaCha8Rng| v + rng.gen_range(-4.0..4.0);
                (img, [j(b[0], rng), j(b[1], rng), b[2], b[3]])
            } else {
                (rng.gen_range(1..=3), random_box(rng))
            };
            CocoResult {
                image_id,
                category_id: 1,
                bbox,
                // coarse scores so ties occur
                score: (rng.gen_range(1..20) as f64) / 20.0,
                segmentation: None,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn ap_ignores_detection_order(seed in any::<u64>(), n_gt in 1usize..6, n_det in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<(u64, [f64; 4])> = (0..n_gt).map(|_| (rng.gen_range(1..=3), random_box(&mut rng))).collect();
        let gt = scene_gt(&gts);
        let dets = random_dets(&mut rng, &gts, n_det);
        let mut reversed = dets.clone();
        reversed.reverse();
        let opts = EvalOptions::default();
        let a = evaluate(&dets, &gt, &opts).unwrap();
        let b = evaluate(&reversed, &gt, &opts).unwrap();
        prop_assert_eq!(a.map50, b.map50);
        prop_assert_eq!(a.map5095, b.map5095);
    }

    #[test]
    fn tail_false_positive_never_helps(seed in any::<u64>(), n_gt in 1usize..6, n_det in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<(u64, [f64; 4])> = (0..n_gt).map(|_| (1, random_box(&mut rng))).collect();
        let gt = scene_gt(&gts);
        let dets = random_dets(&mut rng, &gts, n_det);
        let mut with_tail = dets.clone();
        // image 3 never carries a box here, so this cannot overlap any GT
        with_tail.push(CocoResult {
            image_id: 3,
            category_id: 1,
            bbox: [0.0, 0.0, 10.0, 10.0],
            score: 0.001,
            segmentation: None,
        });
        let opts = EvalOptions::default();
        let a = evaluate(&dets, &gt, &opts).unwrap();
        let b = evaluate(&with_tail, &gt, &opts).unwrap();
        prop_assert!(b.map50 <= a.map50 + 1e-12);
        prop_assert!(b.map5095 <= a.map5095 + 1e-12);
    }
}
