//! Executable reproduction of the six-document motivational example: a naive
//! averaging policy over a fixed top-2 neighbor graph, with NDCG@3 per step.

use crate::metrics;

/// The six-document fixture: three non-relevant documents (d1-d3), three
/// relevant ones (d4-d6), each with exactly two neighbors (0-indexed here).
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub initial_scores: [f64; 6],
    pub labels: [u8; 6],
    pub neighbors: [[usize; 2]; 6],
}

impl Default for ToyFixture {
    fn default() -> Self {
        ToyFixture {
            initial_scores: [0.0, 1.0, 0.0, 0.1, 0.9, 0.9],
            labels: [0, 0, 0, 1, 1, 1],
            neighbors: [[1, 3], [0, 3], [3, 4], [4, 5], [3, 5], [3, 4]],
        }
    }
}

/// One synchronous averaging step: every document moves to the mean of its
/// own previous score and its two neighbors' previous scores, all reading
/// the same previous vector.
pub fn naive_average_step(scores: &[f64; 6], fixture: &ToyFixture) -> [f64; 6] {
    let mut next = [0.0; 6];
    for (i, out) in next.iter_mut().enumerate() {
        let [n1, n2] = fixture.neighbors[i];
        *out = (scores[i] + scores[n1] + scores[n2]) / 3.0;
    }
    next
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRow {
    pub step: usize,
    pub scores: [f64; 6],
    pub ndcg3: f64,
}

/// Iterate the averaging policy and report scores (2 decimals) and NDCG@3 per
/// step. The published table feeds the rounded values back into the next
/// step, so the iteration state is rounded between steps as well; with exact
/// fractions d1 lands on 0.5148 at step 3 instead of the printed 0.52.
pub fn run_toy(steps: usize) -> Vec<ToyRow> {
    let fixture = ToyFixture::default();
    let mut scores = fixture.initial_scores;
    let mut rows = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if step > 0 {
            scores = naive_average_step(&scores, &fixture).map(round2);
        }
        let ndcg3 = metrics::ndcg_at_k(&scores, &fixture.labels, 3).expect("finite fixture");
        rows.push(ToyRow {
            step,
            scores,
            ndcg3,
        });
    }
    rows
}

/// The published score table for steps 0..3, row-major by document.
pub const EXPECTED_TABLE: [[f64; 6]; 4] = [
    [0.0, 1.0, 0.0, 0.1, 0.9, 0.9],
    [0.37, 0.37, 0.33, 0.63, 0.63, 0.63],
    [0.46, 0.46, 0.53, 0.63, 0.63, 0.63],
    [0.52, 0.52, 0.6, 0.63, 0.63, 0.63],
];

/// True iff every score cell overlapping the published table (up to four
/// rows) matches within +-0.005 and NDCG@3 is 1.0 at steps 1..3.
pub fn table_matches(rows: &[ToyRow]) -> bool {
    if rows.is_empty() {
        return false;
    }
    for (row, expected) in rows.iter().zip(EXPECTED_TABLE.iter()) {
        for (got, want) in row.scores.iter().zip(expected) {
            if (got - want).abs() > 0.005 {
                return false;
            }
        }
        if row.step >= 1 && (row.ndcg3 - 1.0).abs() > 1e-9 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_from_raw_scores() {
        let fx = ToyFixture::default();
        let next = naive_average_step(&fx.initial_scores, &fx);
        // d4: (0.1 + 0.9 + 0.9) / 3
        assert!((next[3] - 0.6333333333333333).abs() < 1e-12);
        // synchronous semantics: d1 reads d2's *previous* score 1.0,
        // not any already-updated value
        assert!((next[0] - 0.36666666666666664).abs() < 1e-12);
        assert!((next[0] - 0.3667).abs() < 1e-4);
    }

    #[test]
    fn reproduces_published_table() {
        let rows = run_toy(3);
        assert!(table_matches(&rows), "{rows:?}");
    }

    #[test]
    fn step2_and_step3_cells() {
        let rows = run_toy(3);
        assert!((rows[2].scores[0] - 0.46).abs() <= 0.005);
        assert!((rows[3].scores[2] - 0.6).abs() <= 0.005);
        assert!((rows[3].scores[0] - 0.52).abs() <= 0.005);
    }

    #[test]
    fn ndcg_trajectory() {
        let rows = run_toy(3);
        assert!((rows[0].ndcg3 - 0.53073).abs() < 1e-3);
        for row in &rows[1..] {
            assert!((row.ndcg3 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_is_initial_row_only() {
        let rows = run_toy(0);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].scores, ToyFixture::default().initial_scores);
    }

    #[test]
    fn relevant_docs_stay_on_top_after_step_one() {
        // exact iteration: the rounded table variant eventually ties at 0.63
        let fx = ToyFixture::default();
        let mut scores = fx.initial_scores;
        for step in 1..=30 {
            scores = naive_average_step(&scores, &fx);
            let worst_relevant = scores[3..].iter().cloned().fold(f64::INFINITY, f64::min);
            let best_nonrelevant = scores[..3].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(worst_relevant > best_nonrelevant, "step {step}: {scores:?}");
        }
    }

    #[test]
    fn converges_by_step_50() {
        let rows = run_toy(51);
        let last = &rows[50].scores;
        let next = &rows[51].scores;
        let max_change = last
            .iter()
            .zip(next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_change < 1e-6, "max change {max_change}");
    }
}
