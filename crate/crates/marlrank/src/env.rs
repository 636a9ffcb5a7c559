//! The multi-agent ranking environment: similarity scoring, top-k neighbor
//! graphs, per-agent observation construction, synchronous transitions and
//! the NDCG terminal reward.

use thiserror::Error;

use crate::letor::QueryGroup;
use crate::metrics::{self, MetricError};
use crate::nn::{sigmoid, ModelParams, NnError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("expected {expected} joint actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
    #[error("episode over: step {t} at horizon {horizon}")]
    EpisodeOver { t: usize, horizon: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A discrete relevance level in {0,1,2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLevel(pub u8);

impl ActionLevel {
    pub fn from_index(i: usize) -> Self {
        debug_assert!(i < 3);
        ActionLevel(i as u8)
    }

    /// Scalar encoding fed into next-step observations: level/2 in {0, 0.5, 1}.
    pub fn encode(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

/// Pair encoding for the similarity head: [d_i | d_j | |d_i - d_j| | d_i * d_j].
pub fn pair_encoding(d_i: &[f64], d_j: &[f64]) -> Vec<f64> {
    debug_assert_eq!(d_i.len(), d_j.len());
    let mut enc = Vec::with_capacity(4 * d_i.len());
    enc.extend_from_slice(d_i);
    enc.extend_from_slice(d_j);
    enc.extend(d_i.iter().zip(d_j).map(|(a, b)| (a - b).abs()));
    enc.extend(d_i.iter().zip(d_j).map(|(a, b)| a * b));
    enc
}

/// Pre-sigmoid similarity logit for one ordering of the pair.
pub fn similarity_logit(params: &ModelParams, d_i: &[f64], d_j: &[f64]) -> Result<f64, NnError> {
    Ok(params.similarity.affine(&pair_encoding(d_i, d_j))?[0])
}

/// Symmetrized similarity stored in the graph: (s(i,j) + s(j,i)) / 2.
/// A single ordering is not symmetric because the first two encoding blocks
/// are ordered.
pub fn similarity_score(params: &ModelParams, d_i: &[f64], d_j: &[f64]) -> Result<f64, NnError> {
    let fwd = sigmoid(similarity_logit(params, d_i, d_j)?);
    let rev = sigmoid(similarity_logit(params, d_j, d_i)?);
    Ok(0.5 * (fwd + rev))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub index: usize,
    pub similarity: f64,
}

/// Per-document top-k similar-document lists, similarity descending,
/// ties broken by ascending index. Built once per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<NeighborEntry>>,
}

pub fn build_neighbor_graph(
    params: &ModelParams,
    group: &QueryGroup,
    k: usize,
) -> Result<NeighborGraph, NnError> {
    let n = group.docs.len();
    // symmetric by construction, compute each unordered pair once
    let mut sim = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = similarity_score(params, &group.docs[i].features, &group.docs[j].features)?;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let neighbors = (0..n)
        .map(|i| {
            let mut entries: Vec<NeighborEntry> = (0..n)
                .filter(|&j| j != i)
                .map(|j| NeighborEntry {
                    index: j,
                    similarity: sim[i][j],
                })
                .collect();
            entries.sort_by(|a, b| {
                b.similarity
                    .partial_cmp(&a.similarity)
                    .unwrap()
                    .then(a.index.cmp(&b.index))
            });
            entries.truncate(k);
            entries
        })
        .collect();
    Ok(NeighborGraph { neighbors })
}

/// State of one query episode. Features, labels and the neighbor graph are
/// fixed for the whole episode; only the step counter and the last joint
/// action change.
#[derive(Debug, Clone)]
pub struct EnvState<'a> {
    pub group: &'a QueryGroup,
    pub graph: &'a NeighborGraph,
    pub k: usize,
    pub horizon: usize,
    pub t: usize,
    /// Encoded previous actions, one per document; all zero at t = 0.
    pub last_actions: Vec<f64>,
}

impl<'a> EnvState<'a> {
    pub fn new(group: &'a QueryGroup, graph: &'a NeighborGraph, k: usize, horizon: usize) -> Self {
        EnvState {
            group,
            graph,
            k,
            horizon,
            t: 0,
            last_actions: vec![0.0; group.docs.len()],
        }
    }

    pub fn num_docs(&self) -> usize {
        self.group.docs.len()
    }

    /// Observation for agent `i`:
    /// [d_i | k previous neighbor actions | k similarities | (1/k) sum_n s_n d_n].
    /// Length is always 2F + 2k; missing neighbor slots stay zero and the
    /// weighted-mean divisor stays k.
    pub fn observation(&self, i: usize) -> Vec<f64> {
        let feats = &self.group.docs[i].features;
        let f = feats.len();
        let mut obs = vec![0.0; 2 * f + 2 * self.k];
        obs[..f].copy_from_slice(feats);
        for (slot, entry) in self.graph.neighbors[i].iter().take(self.k).enumerate() {
            obs[f + slot] = self.last_actions[entry.index];
            obs[f + self.k + slot] = entry.similarity;
            let nf = &self.group.docs[entry.index].features;
            let weighted = &mut obs[f + 2 * self.k..];
            for (w, x) in weighted.iter_mut().zip(nf) {
                *w += entry.similarity * x / self.k as f64;
            }
        }
        obs
    }

    /// Synchronous transition on discrete joint actions.
    pub fn step(&mut self, joint_actions: &[ActionLevel]) -> Result<(), EnvError> {
        let encoded: Vec<f64> = joint_actions.iter().map(|a| a.encode()).collect();
        self.step_encoded(&encoded)
    }

    /// Synchronous transition on already-encoded actions in [0,1]; greedy
    /// evaluation feeds expected scores divided by 2 through this path.
    pub fn step_encoded(&mut self, encoded: &[f64]) -> Result<(), EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeOver {
                t: self.t,
                horizon: self.horizon,
            });
        }
        if encoded.len() != self.num_docs() {
            return Err(EnvError::WrongActionCount {
                expected: self.num_docs(),
                got: encoded.len(),
            });
        }
        self.last_actions.clear();
        self.last_actions
            .extend(encoded.iter().map(|a| a.clamp(0.0, 1.0)));
        self.t += 1;
        Ok(())
    }
}

/// Terminal reward NDCG_T - NDCG_best, where NDCG_best is 1 if any document
/// is relevant and 0 otherwise. All earlier steps have zero global reward.
pub fn terminal_reward(
    final_scores: &[f64],
    labels: &[u8],
    cutoff: usize,
) -> Result<f64, EnvError> {
    let ndcg = metrics::ndcg_at_k(final_scores, labels, cutoff)?;
    let best = if labels.iter().any(|&l| l > 0) { 1.0 } else { 0.0 };
    Ok(ndcg - best)
}

/// Per-level reward for matching the ground-truth label, one flat penalty
/// for missing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSchedule {
    pub match_reward: [f64; 3],
    pub mismatch_penalty: f64,
}

impl RewardSchedule {
    pub const MQ2007: RewardSchedule = RewardSchedule {
        match_reward: [0.001, 0.003, 0.008],
        mismatch_penalty: -0.001,
    };
    pub const OHSUMED: RewardSchedule = RewardSchedule {
        match_reward: [0.001, 0.003, 0.004],
        mismatch_penalty: -0.001,
    };
}

impl std::str::FromStr for RewardSchedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mq2007" => Ok(RewardSchedule::MQ2007),
            "ohsumed" => Ok(RewardSchedule::OHSUMED),
            other => Err(format!("unknown reward schedule `{other}`")),
        }
    }
}

pub fn individual_reward(action: ActionLevel, label: u8, schedule: &RewardSchedule) -> f64 {
    if action.0 == label {
        schedule.match_reward[label as usize]
    } else {
        schedule.mismatch_penalty
    }
}
