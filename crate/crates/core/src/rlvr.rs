//! Verifiable rewards from geodesic distances, group-normalized advantages,
//! the clipped GRPO objective, and a small categorical policy trained with
//! it as a stand-in for fine-tuning a vision-language model.

use crate::rng::StreamRng;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Standard deviation below which a reward group carries no signal.
pub const SIGMA_GUARD: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum RlvrError {
    #[error("distance list is empty")]
    EmptyDistances,
    #[error("distance {0} is NaN")]
    NanDistance(usize),
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("old policy assigns zero probability to response {0}")]
    ZeroOldProbability(usize),
    #[error("response index {index} out of range for {n} choices")]
    ChoiceOutOfRange { index: usize, n: usize },
    #[error("training diverged at iteration {0}")]
    Diverged(usize),
    #[error("no prompts to train on")]
    NoPrompts,
}

fn check_distances(d: &[f64]) -> Result<(), RlvrError> {
    if d.is_empty() {
        return Err(RlvrError::EmptyDistances);
    }
    if let Some(i) = d.iter().position(|x| x.is_nan()) {
        return Err(RlvrError::NanDistance(i));
    }
    Ok(())
}

fn soft_reward_valid(d: &[f64], j: usize) -> f64 {
    if !d[j].is_finite() {
        return 0.0;
    }
    let finite = d.iter().copied().filter(|x| x.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if hi == lo {
        return 0.5;
    }
    ((hi - d[j]) / (hi - lo)).clamp(0.0, 1.0)
}

/// Distance-normalized reward for choosing index `choice` (0-based). An
/// invalid output (`None` or out of range) earns the mean of all valid-choice
/// rewards. Unreachable (`+inf`) candidates are left out of the normalization
/// and earn 0.
pub fn soft_reward(d: &[f64], choice: Option<usize>) -> Result<f64, RlvrError> {
    check_distances(d)?;
    match choice {
        Some(j) if j < d.len() => Ok(soft_reward_valid(d, j)),
        _ => Ok((0..d.len()).map(|j| soft_reward_valid(d, j)).sum::<f64>() / d.len() as f64),
    }
}

/// 1 when the chosen candidate is (one of) the closest, else 0.
pub fn binary_reward(d: &[f64], choice: Option<usize>) -> Result<f64, RlvrError> {
    check_distances(d)?;
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(match choice {
        Some(j) if j < d.len() && d[j].is_finite() && d[j] == min => 1.0,
        _ => 0.0,
    })
}

/// `(R_i - mean) / std` with the population standard deviation; all zeros
/// when the group has no spread.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RlvrError> {
    if rewards.len() < 2 {
        return Err(RlvrError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let sigma = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt();
    if sigma < SIGMA_GUARD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mu) / sigma).collect())
}

pub const FEATURES: usize = 3;
pub type Features = [f64; FEATURES];

/// One decision as the toy policy sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPrompt {
    pub features: Vec<Features>,
    pub distances: Vec<f64>,
}

impl ToyPrompt {
    /// Features per candidate: distance rank scaled to [0, 1] (ties and
    /// unreachable candidates ranked by index, after reachable ones), an
    /// object-kind flag, and bearing / π.
    pub fn new(distances: Vec<f64>, is_object: &[bool], bearings: &[f64]) -> Result<Self, RlvrError> {
        check_distances(&distances)?;
        let n = distances.len();
        if is_object.len() != n || bearings.len() != n {
            return Err(RlvrError::InvalidConfig("feature lists differ in length".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let mut rank = vec![0.0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = if n > 1 { r as f64 / (n - 1) as f64 } else { 0.0 };
        }
        let features = (0..n)
            .map(|i| [rank[i], if is_object[i] { 1.0 } else { 0.0 }, bearings[i] / PI])
            .collect();
        Ok(Self { features, distances })
    }

    pub fn from_sample(s: &RlvrSample) -> Result<Self, RlvrError> {
        let objects: Vec<bool> = s.kinds.iter().map(|k| k == "object").collect();
        Self::new(s.distance_values(), &objects, &s.bearings)
    }

    /// Three frontier candidates at distances 2, 4 and 6 m.
    pub fn fixed_example() -> Self {
        Self::new(vec![2.0, 4.0, 6.0], &[false; 3], &[0.4, -0.2, 0.9]).expect("valid example")
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| soft_reward_valid(&self.distances, j))
            .collect()
    }
}

/// Softmax over linear scores `theta · f_j`.
pub fn probabilities(theta: &[f64], prompt: &ToyPrompt) -> Vec<f64> {
    let logits: Vec<f64> = prompt
        .features
        .iter()
        .map(|f| f.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Linear-softmax policy with frozen copies for sampling (`old`) and
/// regularization (`reference`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub theta: Vec<f64>,
    pub old: Vec<f64>,
    pub reference: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(theta: Vec<f64>) -> Self {
        Self {
            old: theta.clone(),
            reference: theta.clone(),
            theta,
        }
    }

    pub fn probs(&self, prompt: &ToyPrompt) -> Vec<f64> {
        probabilities(&self.theta, prompt)
    }

    pub fn snapshot_old(&mut self) {
        self.old.clone_from(&self.theta);
    }

    pub fn refresh_reference(&mut self) {
        self.reference.clone_from(&self.theta);
    }

    /// Expected soft reward of a sample from the current policy.
    pub fn expected_reward(&self, prompt: &ToyPrompt) -> f64 {
        self.probs(prompt).iter().zip(prompt.rewards()).map(|(p, r)| p * r).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    /// Iterations between reference-policy refreshes.
    pub ref_refresh: usize,
    /// Gradient steps per sampled batch.
    pub inner_steps: usize,
    /// Prompts sampled per iteration when training on a dataset.
    pub prompts_per_iter: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_coef: 0.04,
            learning_rate: 0.5,
            ref_refresh: 50,
            inner_steps: 2,
            prompts_per_iter: 16,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), RlvrError> {
        let bad = |m: &str| Err(RlvrError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip epsilon must lie in (0, 1)");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("KL coefficient must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if self.ref_refresh == 0 || self.inner_steps == 0 || self.prompts_per_iter == 0 {
            return bad("refresh interval, inner steps and prompts per iteration must be positive");
        }
        Ok(())
    }
}

/// G sampled responses to one prompt. For the toy policy each response is a
/// single token: the chosen candidate index.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRollout {
    pub responses: Vec<usize>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    pub fn new(responses: Vec<usize>, rewards: Vec<f64>) -> Result<Self, RlvrError> {
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            responses,
            rewards,
            advantages,
        })
    }

    /// Samples `g` responses from `probs` and scores them with the soft reward.
    pub fn sample(prompt: &ToyPrompt, probs: &[f64], g: usize, rng: &mut impl Rng) -> Result<Self, RlvrError> {
        let responses: Vec<usize> = (0..g).map(|_| sample_categorical(probs, rng)).collect();
        let rewards = responses
            .iter()
            .map(|&j| soft_reward(&prompt.distances, Some(j)))
            .collect::<Result<_, _>>()?;
        Self::new(responses, rewards)
    }
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Exact categorical KL(p ‖ q).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum()
}

/// Clipped surrogate minus `β·KL(π_θ ‖ π_ref)` for one group, with its
/// gradient in θ. Ratios use the policy's `old` parameters.
pub fn grpo_objective(
    policy: &ToyPolicy,
    prompt: &ToyPrompt,
    group: &GroupRollout,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>), RlvrError> {
    let n = prompt.len();
    if group.responses.len() < 2 {
        return Err(RlvrError::GroupTooSmall(group.responses.len()));
    }
    let pi = policy.probs(prompt);
    let old = probabilities(&policy.old, prompt);
    let reference = probabilities(&policy.reference, prompt);
    let dim = policy.theta.len();
    let mean_f: Vec<f64> = (0..dim)
        .map(|k| pi.iter().zip(&prompt.features).map(|(p, f)| p * f[k]).sum())
        .collect();

    let g = group.responses.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    for (&o, &a) in group.responses.iter().zip(&group.advantages) {
        if o >= n {
            return Err(RlvrError::ChoiceOutOfRange { index: o, n });
        }
        if old[o] <= 0.0 {
            return Err(RlvrError::ZeroOldProbability(o));
        }
        let w = pi[o] / old[o];
        let unclipped = w * a;
        let clipped = w.clamp(lo, hi) * a;
        value += unclipped.min(clipped) / g;
        // the clipped branch is constant in θ
        if unclipped <= clipped {
            for k in 0..dim {
                grad[k] += a * w * (prompt.features[o][k] - mean_f[k]) / g;
            }
        }
    }
    if cfg.kl_coef > 0.0 {
        value -= cfg.kl_coef * kl_divergence(&pi, &reference);
        for j in 0..n {
            let log_ratio = pi[j].ln() - reference[j].ln();
            for k in 0..dim {
                grad[k] -= cfg.kl_coef * pi[j] * (prompt.features[j][k] - mean_f[k]) * log_ratio;
            }
        }
    }
    Ok((value, grad))
}

/// Learning curve of [`train_toy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean soft reward of the sampled responses, per iteration.
    pub sampled_reward: Vec<f64>,
    /// Expected soft reward under π_θ after each iteration's update.
    pub expected_reward: Vec<f64>,
    pub policy: ToyPolicy,
}

impl TrainReport {
    pub fn final_expected(&self) -> f64 {
        self.expected_reward.last().copied().unwrap_or(f64::NAN)
    }
}

/// GRPO on the toy policy starting from θ = 0. Each iteration samples a
/// group per prompt from π_old, then takes `inner_steps` ascent steps on the
/// batch-averaged objective.
pub fn train_toy(prompts: &[ToyPrompt], cfg: &GrpoConfig, iterations: usize, seed: u64) -> Result<TrainReport, RlvrError> {
    train_toy_from(ToyPolicy::new(vec![0.0; FEATURES]), prompts, cfg, iterations, seed)
}

pub fn train_toy_from(
    mut policy: ToyPolicy,
    prompts: &[ToyPrompt],
    cfg: &GrpoConfig,
    iterations: usize,
    seed: u64,
) -> Result<TrainReport, RlvrError> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(RlvrError::NoPrompts);
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut sampled_reward = Vec::with_capacity(iterations);
    let mut expected_reward = Vec::with_capacity(iterations);
    for it in 0..iterations {
        if it % cfg.ref_refresh == 0 {
            policy.refresh_reference();
        }
        policy.snapshot_old();
        let batch: Vec<&ToyPrompt> = if prompts.len() <= cfg.prompts_per_iter {
            prompts.iter().collect()
        } else {
            let mut idx = sample_indices(&mut rng, prompts.len(), cfg.prompts_per_iter).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &prompts[i]).collect()
        };
        let mut groups = Vec::with_capacity(batch.len());
        let mut total = 0.0;
        for p in &batch {
            let old = probabilities(&policy.old, p);
            let g = GroupRollout::sample(p, &old, cfg.group_size, &mut rng)?;
            total += g.rewards.iter().sum::<f64>() / g.rewards.len() as f64;
            groups.push(g);
        }
        let mean_reward = total / batch.len() as f64;
        if mean_reward.is_nan() {
            return Err(RlvrError::Diverged(it));
        }
        sampled_reward.push(mean_reward);
        for _ in 0..cfg.inner_steps {
            let mut step = vec![0.0; policy.theta.len()];
            for (p, g) in batch.iter().zip(&groups) {
                let (_, grad) = grpo_objective(&policy, p, g, cfg)?;
                for (s, d) in step.iter_mut().zip(grad) {
                    *s += d / batch.len() as f64;
                }
            }
            for (t, s) in policy.theta.iter_mut().zip(step) {
                *t += cfg.learning_rate * s;
            }
            if policy.theta.iter().any(|t| !t.is_finite()) {
                return Err(RlvrError::Diverged(it));
            }
        }
        let expected = batch.iter().map(|p| policy.expected_reward(p)).sum::<f64>() / batch.len() as f64;
        expected_reward.push(expected);
    }
    Ok(TrainReport {
        sampled_reward,
        expected_reward,
        policy,
    })
}

/// One waypoint decision recorded for offline training. Field order is the
/// JSONL column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlvrSample {
    pub scene: String,
    pub episode: u64,
    pub waypoint: u32,
    /// Directory holding the archived prompt (images plus manifest.json).
    pub prompt_dir: Option<String>,
    /// Geodesic distance from each candidate to the goal; `null` when
    /// unreachable.
    pub distances: Vec<Option<f64>>,
    /// Display number chosen (0 = look around), `null` when uncertain.
    pub chosen: Option<usize>,
    pub t_prob: f64,
    pub seed: u64,
    /// "frontier" or "object" per candidate.
    pub kinds: Vec<String>,
    /// Candidate bearing relative to the agent heading, radians.
    pub bearings: Vec<f64>,
}

impl RlvrSample {
    pub fn distance_values(&self) -> Vec<f64> {
        self.distances.iter().map(|d| d.unwrap_or(f64::INFINITY)).collect()
    }

    pub fn encode_distances(d: &[f64]) -> Vec<Option<f64>> {
        d.iter().map(|x| x.is_finite().then_some(*x)).collect()
    }
}

/// One JSON object per line.
pub fn to_jsonl(samples: &[RlvrSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<RlvrSample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
