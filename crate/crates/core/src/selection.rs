//! Frequency-binned mask selection with reference-distribution verification.
//!
//! All `m * n` query-to-region distances are sorted and cut into `n` bins of
//! `m` entries. A bin dominated (strictly more than the threshold) by one
//! region nominates that region. Nominated regions are then kept only if
//! their mean distance to the queries lies within `sigma_mult` population
//! standard deviations of the mean pairwise query distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{check_dim, euclidean, normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Euclidean distance between L2-normalized copies.
    #[default]
    Normalized,
    /// Euclidean distance on the vectors as given.
    Raw,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(DistanceMode::Normalized),
            "raw" => Ok(DistanceMode::Raw),
            other => Err(Error::Config(format!("unknown distance mode {other:?}"))),
        }
    }
}

/// Which distances feed a candidate's mean during verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMean {
    /// Mean of the candidate's distances to every query.
    #[default]
    AllQueries,
    /// Mean of the entries in the bin that nominated the candidate.
    BinEntries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub dominance: f64,
    pub sigma_mult: f64,
    pub distance: DistanceMode,
    pub candidate_mean: CandidateMean,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            dominance: 0.8,
            sigma_mult: 3.0,
            distance: DistanceMode::Normalized,
            candidate_mean: CandidateMean::AllQueries,
        }
    }
}

fn prepare<V: AsRef<[f64]>>(vectors: &[V], mode: DistanceMode, dim: usize) -> Result<Vec<Vec<f64>>> {
    vectors
        .iter()
        .map(|v| {
            let v = v.as_ref();
            check_dim(dim, v.len())?;
            match mode {
                DistanceMode::Normalized => normalized(v),
                DistanceMode::Raw => {
                    if v.iter().all(|x| *x == 0.0) {
                        Err(Error::domain("zero vector in distance computation"))
                    } else {
                        Ok(v.to_vec())
                    }
                }
            }
        })
        .collect()
}

/// Row-major `m x n` matrix of query-to-region distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, query: usize, mask: usize) -> f64 {
        self.values[query * self.cols + mask]
    }

    pub fn column(&self, mask: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, mask))
    }
}

pub fn distance_matrix<Q: AsRef<[f64]>, R: AsRef<[f64]>>(
    queries: &[Q],
    regions: &[R],
    mode: DistanceMode,
) -> Result<DistanceMatrix> {
    if queries.is_empty() || regions.is_empty() {
        return Err(Error::domain("distance matrix needs at least one query and one region"));
    }
    let dim = queries[0].as_ref().len();
    let qs = prepare(queries, mode, dim)?;
    let rs = prepare(regions, mode, dim)?;
    let mut values = Vec::with_capacity(qs.len() * rs.len());
    for q in &qs {
        for r in &rs {
            values.push(euclidean(q, r));
        }
    }
    Ok(DistanceMatrix {
        rows: qs.len(),
        cols: rs.len(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEntry {
    pub distance: f64,
    pub query: usize,
    pub mask: usize,
}

/// Sort every entry ascending (ties by mask then query) and chunk into `n`
/// bins of `m`.
pub fn bin_distances(d: &DistanceMatrix) -> Vec<Vec<BinEntry>> {
    let mut entries: Vec<BinEntry> = (0..d.rows)
        .flat_map(|i| {
            (0..d.cols).map(move |j| BinEntry {
                distance: d.get(i, j),
                query: i,
                mask: j,
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.mask.cmp(&b.mask))
            .then(a.query.cmp(&b.query))
    });
    entries.chunks(d.rows.max(1)).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bin: usize,
    pub mask: usize,
    pub dominance: f64,
}

/// A bin nominates its most frequent mask when that mask's share is strictly
/// above `threshold`. Repeat nominations keep the earliest bin.
pub fn select_candidates(bins: &[Vec<BinEntry>], threshold: f64) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for (k, bin) in bins.iter().enumerate() {
        if bin.is_empty() {
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in bin {
            *counts.entry(e.mask).or_default() += 1;
        }
        // BTreeMap iterates masks ascending, so the lowest index wins ties.
        let (mask, count) = counts.iter().fold(
            (usize::MAX, 0usize),
            |best, (&m, &c)| if c > best.1 { (m, c) } else { best },
        );
        let dominance = count as f64 / bin.len() as f64;
        if dominance > threshold && !out.iter().any(|c| c.mask == mask) {
            out.push(Candidate {
                bin: k,
                mask,
                dominance,
            });
        }
    }
    out
}

/// Pairwise distances among the queries with their population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    pub queries: usize,
    pub distances: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ReferenceDistribution {
    pub fn from_queries<Q: AsRef<[f64]>>(queries: &[Q], mode: DistanceMode) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::domain("reference distribution needs at least one query"));
        }
        let dim = queries[0].as_ref().len();
        let qs = prepare(queries, mode, dim)?;
        let mut distances = Vec::with_capacity(qs.len() * (qs.len().saturating_sub(1)) / 2);
        for i in 0..qs.len() {
            for j in (i + 1)..qs.len() {
                distances.push(euclidean(&qs[i], &qs[j]));
            }
        }
        Ok(Self::from_distances(qs.len(), distances))
    }

    pub fn from_distances(queries: usize, distances: Vec<f64>) -> Self {
        let (mean, std) = if distances.is_empty() {
            (0.0, 0.0)
        } else {
            let n = distances.len() as f64;
            let mean = distances.iter().sum::<f64>() / n;
            let var = distances.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        Self {
            queries,
            distances,
            mean,
            std,
        }
    }

    /// Fewer than two queries or zero spread: verification cannot discriminate.
    pub fn is_degenerate(&self) -> bool {
        self.queries < 2 || self.std == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub candidates: Vec<Candidate>,
    pub verified: Vec<usize>,
    pub per_mask_mean: BTreeMap<usize, f64>,
    pub deltas: BTreeMap<usize, f64>,
    /// Set when the reference distribution was degenerate and every candidate
    /// was accepted unchecked.
    pub degenerate_reference: bool,
}

pub fn verify(
    candidates: &[Candidate],
    d: &DistanceMatrix,
    bins: &[Vec<BinEntry>],
    reference: &ReferenceDistribution,
    params: &SelectionParams,
) -> Result<SelectionResult> {
    let m = d.rows;
    if reference.queries != m || reference.distances.len() != m * m.saturating_sub(1) / 2 {
        return Err(Error::domain(format!(
            "reference distribution built from {} queries ({} distances) but the matrix has {m} rows",
            reference.queries,
            reference.distances.len()
        )));
    }
    let degenerate = reference.is_degenerate();
    if degenerate && !candidates.is_empty() {
        log::warn!(
            "degenerate reference distribution (m = {m}, std = {}); accepting {} candidate(s) unverified",
            reference.std,
            candidates.len()
        );
    }
    let mut per_mask_mean = BTreeMap::new();
    let mut deltas = BTreeMap::new();
    let mut verified = Vec::new();
    for c in candidates {
        let mean = match params.candidate_mean {
            CandidateMean::AllQueries => d.column(c.mask).sum::<f64>() / m as f64,
            CandidateMean::BinEntries => {
                let bin = bins
                    .get(c.bin)
                    .ok_or_else(|| Error::domain(format!("candidate bin {} out of range", c.bin)))?;
                let own: Vec<f64> = bin.iter().filter(|e| e.mask == c.mask).map(|e| e.distance).collect();
                own.iter().sum::<f64>() / own.len() as f64
            }
        };
        let delta = (mean - reference.mean).abs();
        per_mask_mean.insert(c.mask, mean);
        deltas.insert(c.mask, delta);
        if degenerate || delta <= params.sigma_mult * reference.std {
            verified.push(c.mask);
        }
    }
    Ok(SelectionResult {
        candidates: candidates.to_vec(),
        verified,
        per_mask_mean,
        deltas,
        degenerate_reference: degenerate,
    })
}

/// Everything the selection produced for one image, in dump-friendly form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub distances: DistanceMatrix,
    pub bins: Vec<Vec<BinEntry>>,
    pub reference: ReferenceDistribution,
    pub result: SelectionResult,
}

/// Run the whole selection for one set of queries against one image's regions.
pub fn select_masks<Q: AsRef<[f64]>, R: AsRef<[f64]>>(
    queries: &[Q],
    regions: &[R],
    params: &SelectionParams,
) -> Result<SelectionTrace> {
    let distances = distance_matrix(queries, regions, params.distance)?;
    let bins = bin_distances(&distances);
    let candidates = select_candidates(&bins, params.dominance);
    let reference = ReferenceDistribution::from_queries(queries, params.distance)?;
    let result = verify(&candidates, &distances, &bins, &reference, params)?;
    Ok(SelectionTrace {
        distances,
        bins,
        reference,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(mask_of: &[usize]) -> Vec<BinEntry> {
        mask_of
            .iter()
            .enumerate()
            .map(|(i, &m)| BinEntry {
                distance: i as f64,
                query: i,
                mask: m,
            })
            .collect()
    }

    #[test]
    fn parallel_and_orthogonal_distances() {
        let d = distance_matrix(
            &[vec![2.0, 0.0]],
            &[vec![5.0, 0.0], vec![0.0, 3.0]],
            DistanceMode::Normalized,
        )
        .unwrap();
        assert!(d.get(0, 0).abs() < 1e-12);
        assert!((d.get(0, 1) - 2f64.sqrt()).abs() < 1e-9);
        assert!(distance_matrix(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], DistanceMode::Normalized).is_err());
    }

    #[test]
    fn bins_partition_sorted_entries() {
        let d = DistanceMatrix {
            rows: 2,
            cols: 3,
            values: vec![0.6, 0.1, 0.4, 0.3, 0.5, 0.2],
        };
        let bins = bin_distances(&d);
        let got: Vec<Vec<f64>> = bins.iter().map(|b| b.iter().map(|e| e.distance).collect()).collect();
        assert_eq!(got, vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]);
    }

    #[test]
    fn single_query_gives_singleton_bins() {
        let d = DistanceMatrix {
            rows: 1,
            cols: 3,
            values: vec![0.3, 0.1, 0.2],
        };
        let bins = bin_distances(&d);
        assert_eq!(bins.len(), 3);
        assert_eq!(bins.iter().map(|b| b[0].mask).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn dominance_is_strict() {
        let c = select_candidates(&[entries(&[2, 2])], 0.8);
        assert_eq!(
            c,
            vec![Candidate {
                bin: 0,
                mask: 2,
                dominance: 1.0
            }]
        );
        assert!(select_candidates(&[entries(&[1, 2])], 0.8).is_empty());
        assert!(select_candidates(&[entries(&[7, 7, 7, 7, 3])], 0.8).is_empty());
        let c = select_candidates(&[entries(&[7, 7, 7, 7, 7, 3])], 0.8);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn repeated_nominations_keep_first_bin() {
        let c = select_candidates(&[entries(&[4, 4]), entries(&[4, 4])], 0.8);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].bin, 0);
    }

    #[test]
    fn zero_spread_reference_accepts_with_flag() {
        let reference = ReferenceDistribution::from_distances(3, vec![0.5, 0.5, 0.5]);
        assert_eq!(reference.std, 0.0);
        let d = DistanceMatrix {
            rows: 3,
            cols: 2,
            values: vec![0.5, 0.6, 0.5, 0.6, 0.5, 0.6],
        };
        let bins = bin_distances(&d);
        let cands = vec![
            Candidate {
                bin: 0,
                mask: 0,
                dominance: 1.0,
            },
            Candidate {
                bin: 1,
                mask: 1,
                dominance: 1.0,
            },
        ];
        let r = verify(&cands, &d, &bins, &reference, &SelectionParams::default()).unwrap();
        assert!(r.degenerate_reference);
        assert_eq!(r.verified, vec![0, 1]);
        assert!(r.deltas[&0].abs() < 1e-12);
        assert!((r.deltas[&1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_reference_is_rejected() {
        let reference = ReferenceDistribution::from_distances(2, vec![0.5]);
        let d = DistanceMatrix {
            rows: 3,
            cols: 1,
            values: vec![0.1, 0.2, 0.3],
        };
        assert!(verify(&[], &d, &[], &reference, &SelectionParams::default()).is_err());
    }

    #[test]
    fn far_candidate_is_rejected() {
        let reference = ReferenceDistribution::from_distances(3, vec![0.1, 0.2, 0.3]);
        let d = DistanceMatrix {
            rows: 3,
            cols: 1,
            values: vec![1.0, 1.0, 1.0],
        };
        let bins = bin_distances(&d);
        let cands = select_candidates(&bins, 0.8);
        let r = verify(&cands, &d, &bins, &reference, &SelectionParams::default()).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert!(r.verified.is_empty());
    }
}
