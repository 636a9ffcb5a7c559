//! Graded-relevance ranking metrics: score-to-ranking induction with
//! deterministic tie-breaking, DCG/NDCG@k.
//!
//! Gain = 2^grade - 1, discount = 1/log2(position+1), positions from 1
//! (the LETOR/RankLib convention). Queries with no relevant document score 0.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("scores must be non-empty")]
    EmptyScores,
    #[error("NaN score at index {0}")]
    NanScore(usize),
    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

/// A best-first permutation of document indices with the scores that induced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub source_scores: Vec<f64>,
}

/// Stable descending sort of indices by score; ties break by ascending
/// original index so equal inputs always give equal permutations.
pub fn rank_by_score(scores: &[f64]) -> Result<Ranking, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyScores);
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NanScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(Ranking {
        order,
        source_scores: scores.to_vec(),
    })
}

/// DCG over the first `k` positions of an already-ordered label list.
pub fn dcg_at_k(ordered_labels: &[u8], k: usize) -> f64 {
    ordered_labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (f64::from(1u32 << g) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of the ranking induced by `scores` against graded `labels`.
/// All-zero labels give 0 (the zero-relevant convention).
pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let ranking = rank_by_score(scores)?;
    let ordered: Vec<u8> = ranking.order.iter().map(|&i| labels[i]).collect();
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(&ordered, k) / idcg)
}
