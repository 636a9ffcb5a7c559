//! The shared three-level policy: supervised pre-training, trajectory
//! sampling, return normalization, the REINFORCE update and greedy
//! evaluation rollouts producing NDCG-over-step traces.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{
    build_neighbor_graph, individual_reward, terminal_reward, ActionLevel, EnvError, EnvState,
    RewardSchedule,
};
use crate::letor::{Dataset, QueryGroup};
use crate::metrics;
use crate::nn::{
    self, log_prob_logit_grad, log_softmax, policy_backward, policy_forward, sgd_step, sigmoid,
    GradientBuffer, ModelParams, NnError, NUM_LEVELS,
};
use crate::par::map_slice;

/// NDCG cutoffs reported by `evaluate`, in CSV column order.
pub const EVAL_CUTOFFS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss (training diverged)")]
    Diverged,
}

/// All training hyperparameters with the published defaults.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub t_train: usize,
    pub t_eval: usize,
    pub k: usize,
    pub reward_cutoff: usize,
    pub hidden: usize,
    pub activation: nn::Activation,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub schedule: RewardSchedule,
    pub seed: u64,
    /// Apply the REINFORCE step after every query instead of once per epoch.
    pub update_per_query: bool,
    pub normalize_returns: bool,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            learning_rate: 4e-7,
            t_train: 10,
            t_eval: 10,
            k: 2,
            reward_cutoff: 10,
            hidden: 100,
            activation: nn::Activation::Relu,
            pretrain_epochs: 10,
            pretrain_lr: 0.01,
            schedule: RewardSchedule::MQ2007,
            seed: 0,
            update_per_query: false,
            normalize_returns: true,
            parallel: true,
        }
    }
}

/// Distribution over the three relevance levels plus its expectation,
/// the continuous relevance estimate used for ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: [f64; NUM_LEVELS],
    pub expected_score: f64,
}

impl PolicyOutput {
    fn from_probs(probs: &[f64]) -> Self {
        let expected_score = probs[1] + 2.0 * probs[2];
        PolicyOutput {
            probs: [probs[0], probs[1], probs[2]],
            expected_score,
        }
    }
}

pub fn policy_output(params: &ModelParams, obs: &[f64]) -> Result<PolicyOutput, NnError> {
    Ok(PolicyOutput::from_probs(&policy_forward(params, obs)?.probs))
}

pub fn sample_action<R: Rng>(output: &PolicyOutput, rng: &mut R) -> ActionLevel {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (level, &p) in output.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return ActionLevel::from_index(level);
        }
    }
    ActionLevel::from_index(NUM_LEVELS - 1)
}

/// Deterministic relevance estimate for evaluation-time ranking.
pub fn greedy_score(output: &PolicyOutput) -> f64 {
    output.expected_score
}

/// One (observation, action, advantage) record plus the raw pieces needed to
/// backpropagate through the similarity path. `neighbor_feats` holds the
/// feature vectors of the neighbors actually present, in slot order.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub obs: Vec<f64>,
    pub action: ActionLevel,
    /// Discounted return R_t before normalization.
    pub ret: f64,
    /// Individual reward r_t^i for (action, label).
    pub individual: f64,
    /// Normalized return plus individual reward; the REINFORCE coefficient.
    pub advantage: f64,
    pub neighbor_feats: Vec<Vec<f64>>,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
}

/// Trace of one episode.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Expected scores after each step's forward pass, t = 0..T-1.
    pub per_step_scores: Vec<Vec<f64>>,
    pub final_scores: Vec<f64>,
    /// Populated in sample mode only.
    pub samples: Vec<TrajectorySample>,
}

/// Run one episode over a query group. The neighbor graph is built once; each
/// step builds all N observations from the previous joint action and applies
/// the shared policy. In sample mode the encoded discrete actions feed
/// forward and trajectory samples are collected; in greedy mode the expected
/// scores (divided by 2) feed forward.
pub fn rollout(
    params: &ModelParams,
    group: &QueryGroup,
    horizon: usize,
    mode: RolloutMode,
    schedule: &RewardSchedule,
    gamma: f64,
    reward_cutoff: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainError> {
    let n = group.docs.len();
    let graph = build_neighbor_graph(params, group, params.k)?;
    let mut state = EnvState::new(group, &graph, params.k, horizon);
    let mut per_step_scores = Vec::with_capacity(horizon);
    let mut samples = Vec::new();

    for t in 0..horizon {
        let mut scores = Vec::with_capacity(n);
        let mut encoded = Vec::with_capacity(n);
        for i in 0..n {
            let obs = state.observation(i);
            let out = policy_output(params, &obs)?;
            scores.push(out.expected_score);
            match mode {
                RolloutMode::Sample => {
                    let action = sample_action(&out, rng);
                    encoded.push(action.encode());
                    let neighbor_feats = graph.neighbors[i]
                        .iter()
                        .map(|e| group.docs[e.index].features.clone())
                        .collect();
                    samples.push(TrajectorySample {
                        obs,
                        action,
                        ret: 0.0,
                        individual: individual_reward(action, group.docs[i].label, schedule),
                        advantage: 0.0,
                        neighbor_feats,
                        step: t,
                    });
                }
                RolloutMode::Greedy => {
                    encoded.push(out.expected_score / 2.0);
                }
            }
        }
        per_step_scores.push(scores);
        state.step_encoded(&encoded)?;
    }

    let final_scores = per_step_scores
        .last()
        .cloned()
        .unwrap_or_else(|| vec![0.0; n]);

    if mode == RolloutMode::Sample {
        let labels = group.labels();
        let r_terminal = terminal_reward(&final_scores, &labels, reward_cutoff)?;
        let mut rewards = vec![0.0; horizon];
        if horizon > 0 {
            rewards[horizon - 1] = r_terminal;
        }
        let returns = discounted_returns(&rewards, gamma);
        for s in &mut samples {
            s.ret = returns[s.step];
        }
    }

    Ok(Rollout {
        per_step_scores,
        final_scores,
        samples,
    })
}

/// R_t = sum_{k >= t} gamma^{k-t} r_k.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Standardize the returns of one batch to zero mean and unit (population)
/// standard deviation, then set each advantage to normalized return plus
/// individual reward. Batches of fewer than two samples or with zero variance
/// keep their raw returns.
pub fn normalize_returns(samples: &mut [TrajectorySample]) {
    let n = samples.len();
    if n >= 2 {
        let mean = samples.iter().map(|s| s.ret).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s.ret - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 0.0 {
            let std = var.sqrt();
            for s in samples.iter_mut() {
                s.ret = (s.ret - mean) / std;
            }
        }
    }
    for s in samples.iter_mut() {
        s.advantage = s.ret + s.individual;
    }
}

/// Set advantages without normalization.
pub fn raw_advantages(samples: &mut [TrajectorySample]) {
    for s in samples.iter_mut() {
        s.advantage = s.ret + s.individual;
    }
}

/// Rebuild the similarity-dependent observation entries at the current
/// parameters. Returns the observation plus the pre-sigmoid logits of each
/// neighbor pair, both orderings, for the backward pass.
fn rebuild_observation(
    params: &ModelParams,
    sample: &TrajectorySample,
) -> Result<(Vec<f64>, Vec<(f64, f64)>), NnError> {
    let f = params.feature_dim;
    let k = params.k;
    let mut obs = sample.obs.clone();
    let d_i = sample.obs[..f].to_vec();
    let mut logits = Vec::with_capacity(sample.neighbor_feats.len());
    for w in obs[f + 2 * k..].iter_mut() {
        *w = 0.0;
    }
    for (slot, nf) in sample.neighbor_feats.iter().enumerate() {
        let z_fwd = crate::env::similarity_logit(params, &d_i, nf)?;
        let z_rev = crate::env::similarity_logit(params, nf, &d_i)?;
        let s = 0.5 * (sigmoid(z_fwd) + sigmoid(z_rev));
        obs[f + k + slot] = s;
        for (w, x) in obs[f + 2 * k..].iter_mut().zip(nf) {
            *w += s * x / k as f64;
        }
        logits.push((z_fwd, z_rev));
    }
    Ok((obs, logits))
}

/// Mean over samples of advantage * grad log pi(a|o), with the gradient
/// flowing through the policy network and into the similarity layer via the
/// observation's similarity entries and weighted-feature block. Neighbor
/// selection itself is discrete and carries no gradient.
pub fn reinforce_gradient(
    params: &ModelParams,
    samples: &[TrajectorySample],
) -> Result<GradientBuffer, TrainError> {
    let mut grad = params.grad_buffer();
    let f = params.feature_dim;
    let k = params.k;
    for sample in samples {
        let (obs, pair_logits) = rebuild_observation(params, sample)?;
        let cache = policy_forward(params, &obs)?;
        let mut d_logits = log_prob_logit_grad(&cache.probs, sample.action.0 as usize);
        for g in d_logits.iter_mut() {
            *g *= sample.advantage;
        }
        let g_obs = policy_backward(params, &cache, &d_logits, &mut grad)?;

        let d_i = &sample.obs[..f];
        for (slot, (nf, &(z_fwd, z_rev))) in
            sample.neighbor_feats.iter().zip(&pair_logits).enumerate()
        {
            // total coefficient on s_n: direct similarity slot plus its
            // appearance in the weighted neighbor-feature mean
            let mut coeff = g_obs[f + k + slot];
            for (gw, x) in g_obs[f + 2 * k..].iter().zip(nf) {
                coeff += gw * x / k as f64;
            }
            let s_fwd = sigmoid(z_fwd);
            let s_rev = sigmoid(z_rev);
            let d_fwd = 0.5 * coeff * s_fwd * (1.0 - s_fwd);
            let d_rev = 0.5 * coeff * s_rev * (1.0 - s_rev);
            let enc_fwd = crate::env::pair_encoding(d_i, nf);
            let enc_rev = crate::env::pair_encoding(nf, d_i);
            for (j, (ef, er)) in enc_fwd.iter().zip(&enc_rev).enumerate() {
                grad.similarity.weights[j] += d_fwd * ef + d_rev * er;
            }
            grad.similarity.bias[0] += d_fwd + d_rev;
        }
    }
    if !samples.is_empty() {
        grad.scale(1.0 / samples.len() as f64);
    }
    Ok(grad)
}

/// The scalar objective whose gradient `reinforce_gradient` computes, with
/// advantages held constant: mean of advantage * log pi(a|o(theta)).
/// Used by the finite-difference oracle.
pub fn replay_objective(params: &ModelParams, samples: &[TrajectorySample]) -> f64 {
    let mut total = 0.0;
    for sample in samples {
        let (obs, _) = rebuild_observation(params, sample).unwrap();
        let cache = policy_forward(params, &obs).unwrap();
        total += sample.advantage * log_softmax(&cache.logits)[sample.action.0 as usize];
    }
    total / samples.len().max(1) as f64
}

/// One gradient-ascent step of Eq-style REINFORCE over a sample batch.
pub fn reinforce_update(
    params: &mut ModelParams,
    samples: &[TrajectorySample],
    learning_rate: f64,
) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Ok(());
    }
    let grad = reinforce_gradient(params, samples)?;
    sgd_step(params, &grad, learning_rate)?;
    Ok(())
}

fn epoch_rng(seed: u64, epoch: usize, query: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ ((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            ^ ((query as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)),
    )
}

/// Supervised warm-start: cross-entropy between the policy at t = 0
/// (zero previous actions) and the document label, SGD over shuffled
/// per-query batches. Returns the mean cross-entropy of the last epoch.
pub fn pretrain(
    params: &mut ModelParams,
    train: &Dataset,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    if train.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let mut last_ce = f64::NAN;
    for _epoch in 0..config.pretrain_epochs {
        let mut order: Vec<usize> = (0..train.groups.len()).collect();
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        let mut count = 0usize;
        for &qi in &order {
            let group = &train.groups[qi];
            let graph = build_neighbor_graph(params, group, params.k)?;
            let state = EnvState::new(group, &graph, params.k, 1);
            let mut batch = Vec::with_capacity(group.docs.len());
            for (i, doc) in group.docs.iter().enumerate() {
                let obs = state.observation(i);
                let neighbor_feats = graph.neighbors[i]
                    .iter()
                    .map(|e| group.docs[e.index].features.clone())
                    .collect();
                let cache = policy_forward(params, &obs)?;
                let ce = -log_softmax(&cache.logits)[doc.label as usize];
                if !ce.is_finite() {
                    return Err(TrainError::Diverged);
                }
                ce_sum += ce;
                count += 1;
                // ascent on log pi(label|obs) == descent on cross-entropy
                batch.push(TrajectorySample {
                    obs,
                    action: ActionLevel(doc.label),
                    ret: 0.0,
                    individual: 0.0,
                    advantage: 1.0,
                    neighbor_feats,
                    step: 0,
                });
            }
            reinforce_update(params, &batch, config.pretrain_lr)?;
        }
        last_ce = ce_sum / count as f64;
    }
    Ok(last_ce)
}

/// Mean cross-entropy of the current policy at t = 0 over a dataset.
pub fn mean_cross_entropy(params: &ModelParams, ds: &Dataset, parallel: bool) -> Result<f64, TrainError> {
    if ds.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_group = map_slice(&ds.groups, parallel, |group| -> Result<(f64, usize), TrainError> {
        let graph = build_neighbor_graph(params, group, params.k)?;
        let state = EnvState::new(group, &graph, params.k, 1);
        let mut sum = 0.0;
        for (i, doc) in group.docs.iter().enumerate() {
            let cache = policy_forward(params, &state.observation(i))?;
            sum += -log_softmax(&cache.logits)[doc.label as usize];
        }
        Ok((sum, group.docs.len()))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for r in per_group {
        let (s, c) = r?;
        total += s;
        count += c;
    }
    Ok(total / count as f64)
}

/// Fraction of documents whose argmax level at t = 0 equals the label.
pub fn action_accuracy(params: &ModelParams, ds: &Dataset, parallel: bool) -> Result<f64, TrainError> {
    if ds.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_group = map_slice(&ds.groups, parallel, |group| -> Result<(usize, usize), TrainError> {
        let graph = build_neighbor_graph(params, group, params.k)?;
        let state = EnvState::new(group, &graph, params.k, 1);
        let mut hits = 0usize;
        for (i, doc) in group.docs.iter().enumerate() {
            let out = policy_output(params, &state.observation(i))?;
            let argmax = out
                .probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == doc.label as usize {
                hits += 1;
            }
        }
        Ok((hits, group.docs.len()))
    });
    let mut hits = 0usize;
    let mut count = 0usize;
    for r in per_group {
        let (h, c) = r?;
        hits += h;
        count += c;
    }
    Ok(hits as f64 / count as f64)
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub mean_terminal_reward: f64,
    pub num_samples: usize,
}

/// One REINFORCE epoch over the training set. Sampling rollouts over queries
/// run in parallel with read-only params; exactly one writer applies updates.
/// With `update_per_query` the loop is sequential and normalization happens
/// per query batch.
pub fn train_epoch(
    params: &mut ModelParams,
    train: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    if train.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut reward_sum = 0.0;
    let mut num_samples = 0usize;

    if config.update_per_query {
        for (qi, group) in train.groups.iter().enumerate() {
            let mut rng = epoch_rng(config.seed, epoch, qi);
            let mut roll = rollout(
                params,
                group,
                config.t_train,
                RolloutMode::Sample,
                &config.schedule,
                config.gamma,
                config.reward_cutoff,
                &mut rng,
            )?;
            reward_sum += terminal_reward(
                &roll.final_scores,
                &group.labels(),
                config.reward_cutoff,
            )?;
            num_samples += roll.samples.len();
            if config.normalize_returns {
                normalize_returns(&mut roll.samples);
            } else {
                raw_advantages(&mut roll.samples);
            }
            reinforce_update(params, &roll.samples, config.learning_rate)?;
        }
    } else {
        let shared: &ModelParams = params;
        let indices: Vec<usize> = (0..train.groups.len()).collect();
        let rollouts = map_slice(&indices, config.parallel, |&qi| {
            let group = &train.groups[qi];
            let mut rng = epoch_rng(config.seed, epoch, qi);
            rollout(
                shared,
                group,
                config.t_train,
                RolloutMode::Sample,
                &config.schedule,
                config.gamma,
                config.reward_cutoff,
                &mut rng,
            )
        });
        let mut batch = Vec::new();
        for (group, r) in train.groups.iter().zip(rollouts) {
            let roll = r?;
            reward_sum += terminal_reward(
                &roll.final_scores,
                &group.labels(),
                config.reward_cutoff,
            )?;
            batch.extend(roll.samples);
        }
        num_samples = batch.len();
        if config.normalize_returns {
            normalize_returns(&mut batch);
        } else {
            raw_advantages(&mut batch);
        }
        reinforce_update(params, &batch, config.learning_rate)?;
    }

    Ok(EpochStats {
        mean_terminal_reward: reward_sum / train.groups.len() as f64,
        num_samples,
    })
}

/// Per-step and final NDCG means of greedy evaluation rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `per_step[t][c]` = mean NDCG@EVAL_CUTOFFS[c] over queries after step t+1.
    pub per_step: Vec<[f64; 4]>,
    /// Final-step means; the headline numbers.
    pub final_means: [f64; 4],
}

/// Greedy rollout of `t_eval` steps per query; after every step the NDCG at
/// each cutoff is computed from the current expected scores and averaged over
/// queries. Deterministic given (params, dataset, config).
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<EvalReport, TrainError> {
    if ds.groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_query = map_slice(&ds.groups, config.parallel, |group| {
        // greedy mode never touches the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let roll = rollout(
            params,
            group,
            config.t_eval,
            RolloutMode::Greedy,
            &config.schedule,
            config.gamma,
            config.reward_cutoff,
            &mut rng,
        )?;
        let labels = group.labels();
        let mut steps = Vec::with_capacity(config.t_eval);
        for scores in &roll.per_step_scores {
            let mut row = [0.0f64; 4];
            for (c, &cut) in EVAL_CUTOFFS.iter().enumerate() {
                row[c] = metrics::ndcg_at_k(scores, &labels, cut)?;
            }
            steps.push(row);
        }
        Ok::<_, TrainError>(steps)
    });

    let mut per_step = vec![[0.0f64; 4]; config.t_eval];
    let nq = ds.groups.len() as f64;
    for r in per_query {
        let steps = r?;
        for (t, row) in steps.iter().enumerate() {
            for c in 0..4 {
                per_step[t][c] += row[c] / nq;
            }
        }
    }
    let final_means = *per_step.last().expect("t_eval >= 1");
    Ok(EvalReport {
        per_step,
        final_means,
    })
}

/// End-to-end finite-difference check of the REINFORCE gradient (policy and
/// similarity paths) on a two-document, F=3, k=1 fixture. Samples a short
/// trajectory, freezes actions and advantages, and compares the analytic
/// batch gradient against central differences of the replay objective.
/// Returns the max relative error. `corrupt` injects a bias-gradient error
/// so the check's own sensitivity can be exercised.
pub fn grad_check_end_to_end(seed: u64, corrupt: bool) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // tanh keeps the loss smooth for finite differences
    let params = ModelParams::init(3, 1, 5, nn::Activation::Tanh, &mut rng);
    let docs = vec![
        (0..3).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>(),
        (0..3).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>(),
    ];
    let group = QueryGroup {
        query_id: "gradcheck".into(),
        docs: docs
            .into_iter()
            .zip([2u8, 0u8])
            .map(|(features, label)| crate::letor::DocumentRecord {
                label,
                query_id: "gradcheck".into(),
                features,
                comment: None,
            })
            .collect(),
    };
    let schedule = RewardSchedule::MQ2007;
    let mut roll = rollout(
        &params,
        &group,
        3,
        RolloutMode::Sample,
        &schedule,
        0.95,
        3,
        &mut rng,
    )?;
    normalize_returns(&mut roll.samples);
    let mut analytic = reinforce_gradient(&params, &roll.samples)?;
    if corrupt {
        analytic.output.bias[0] += 0.1;
    }
    Ok(nn::max_gradient_error(&params, &analytic, 1e-5, |p| {
        replay_objective(p, &roll.samples)
    }))
}
