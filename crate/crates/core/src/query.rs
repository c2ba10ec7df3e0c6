//! Attention-weighted query construction from positive and negative exemplar
//! embeddings.
//!
//! Every exemplar embedding is scored against an attention query by cosine
//! similarity, the scores go through a plain softmax (no temperature), and the
//! weighted sums of positives and negatives are subtracted. An empty negative
//! set contributes the zero vector, which makes the positives-only ablation
//! the same code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{check_dim, dot, norm};

/// How exemplar embeddings are weighted before summing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Softmax over cosine similarity to the attention query.
    #[default]
    Attention,
    /// Uniform 1/n weights.
    Mean,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(PoolingMode::Attention),
            "mean" => Ok(PoolingMode::Mean),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Softmax of the similarities. The max is subtracted first; the result is
/// mathematically identical.
pub fn attention_weights(similarities: &[f64]) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::domain("attention weights of an empty list"));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite similarity"));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weights for `embeddings` relative to `query` under the given mode.
pub fn pooling_weights<V: AsRef<[f64]>>(query: &[f64], embeddings: &[V], mode: PoolingMode) -> Result<Vec<f64>> {
    if embeddings.is_empty() {
        return Err(Error::domain("pooling over an empty embedding set"));
    }
    for e in embeddings {
        check_dim(query.len(), e.as_ref().len())?;
    }
    match mode {
        PoolingMode::Attention => {
            let sims = embeddings
                .iter()
                .map(|e| cosine_similarity(query, e.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            attention_weights(&sims)
        }
        PoolingMode::Mean => {
            let w = 1.0 / embeddings.len() as f64;
            Ok(vec![w; embeddings.len()])
        }
    }
}

fn weighted_sum<V: AsRef<[f64]>>(dim: usize, embeddings: &[V], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (e, &w) in embeddings.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(e.as_ref()) {
            *o += w * x;
        }
    }
    out
}

pub fn attention_pool<V: AsRef<[f64]>>(query: &[f64], embeddings: &[V]) -> Result<Vec<f64>> {
    pool(query, embeddings, PoolingMode::Attention)
}

pub fn pool<V: AsRef<[f64]>>(query: &[f64], embeddings: &[V], mode: PoolingMode) -> Result<Vec<f64>> {
    let weights = pooling_weights(query, embeddings, mode)?;
    Ok(weighted_sum(query.len(), embeddings, &weights))
}

/// Positive pool minus negative pool, with the pieces that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedQuery {
    pub vector: Vec<f64>,
    pub positive_pool: Vec<f64>,
    pub negative_pool: Vec<f64>,
    pub positive_weights: Vec<f64>,
    pub negative_weights: Vec<f64>,
}

pub fn adjusted_query<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    query: &[f64],
    positives: &[P],
    negatives: &[N],
    mode: PoolingMode,
) -> Result<AdjustedQuery> {
    if positives.is_empty() {
        return Err(Error::domain("adjusted query needs at least one positive"));
    }
    let dim = query.len();
    let positive_weights = pooling_weights(query, positives, mode)?;
    let positive_pool = weighted_sum(dim, positives, &positive_weights);
    let (negative_weights, negative_pool) = if negatives.is_empty() {
        (Vec::new(), vec![0.0; dim])
    } else {
        let w = pooling_weights(query, negatives, mode)?;
        let p = weighted_sum(dim, negatives, &w);
        (w, p)
    };
    let vector = positive_pool.iter().zip(&negative_pool).map(|(p, n)| p - n).collect();
    Ok(AdjustedQuery {
        vector,
        positive_pool,
        negative_pool,
        positive_weights,
        negative_weights,
    })
}

/// One adjusted query per positive exemplar (for mask selection) plus a
/// single pooled query anchored on the input image (for scoring).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub per_exemplar: Vec<AdjustedQuery>,
    pub pooled: AdjustedQuery,
}

impl QueryBundle {
    pub fn len(&self) -> usize {
        self.per_exemplar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_exemplar.is_empty()
    }

    pub fn exemplar_vectors(&self) -> Vec<&[f64]> {
        self.per_exemplar.iter().map(|q| q.vector.as_slice()).collect()
    }
}

/// Exemplar `i` uses its own embedding as the attention query against the
/// negatives: `q_i = e_i - pool(e_i, negatives)`.
pub fn build_query_bundle<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    input_embedding: &[f64],
    positives: &[P],
    negatives: &[N],
    mode: PoolingMode,
) -> Result<QueryBundle> {
    let pooled = adjusted_query(input_embedding, positives, negatives, mode)?;
    let per_exemplar = positives
        .iter()
        .map(|p| adjusted_query(p.as_ref(), std::slice::from_ref(p), negatives, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryBundle { per_exemplar, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(attention_weights(&[0.3]).unwrap(), vec![1.0]);
        let w = attention_weights(&[1.0, 0.0]).unwrap();
        assert!(close(&w, &[0.7311, 0.2689], 1e-4));
        let w = attention_weights(&[0.2, 0.2, 0.2]).unwrap();
        assert!(close(&w, &[1.0 / 3.0; 3], 1e-15));
        assert!(attention_weights(&[]).is_err());
    }

    #[test]
    fn pool_examples() {
        let e = vec![0.5, -1.0];
        assert!(close(
            &attention_pool(&[1.0, 1.0], std::slice::from_ref(&e)).unwrap(),
            &e,
            1e-15
        ));
        assert!(close(
            &attention_pool(&[1.0, 1.0], &[e.clone(), e.clone()]).unwrap(),
            &e,
            1e-15
        ));
        let got = attention_pool(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(close(&got, &[0.7311, 0.2689], 1e-4));
        assert!(attention_pool::<Vec<f64>>(&[1.0], &[]).is_err());
        assert!(attention_pool(&[1.0, 0.0], &[vec![1.0]]).is_err());
    }

    #[test]
    fn adjusted_query_examples() {
        let q = adjusted_query(
            &[1.0, 1.0],
            &[vec![1.0, 0.0]],
            &[vec![0.0, 1.0]],
            PoolingMode::Attention,
        )
        .unwrap();
        assert_eq!(q.vector, vec![1.0, -1.0]);
        let e = vec![0.3, 0.7];
        let q =
            adjusted_query::<_, Vec<f64>>(&[1.0, 1.0], std::slice::from_ref(&e), &[], PoolingMode::Attention).unwrap();
        assert_eq!(q.vector, e);
        assert!(q.negative_weights.is_empty());
        assert!(adjusted_query::<Vec<f64>, Vec<f64>>(&[1.0], &[], &[], PoolingMode::Attention).is_err());
    }

    #[test]
    fn bundle_single_positive() {
        let e = vec![0.2, 0.9, -0.1];
        let b =
            build_query_bundle::<_, Vec<f64>>(&[1.0, 0.0, 0.0], std::slice::from_ref(&e), &[], PoolingMode::Attention)
                .unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.per_exemplar[0].vector, e);
        assert_eq!(b.pooled.vector, e);
    }

    #[test]
    fn mean_mode_is_uniform() {
        let w = pooling_weights(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], PoolingMode::Mean).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }
}
