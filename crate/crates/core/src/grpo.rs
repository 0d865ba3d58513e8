//! Group-relative policy optimization.
//!
//! Rewards are standardized within each group of rollouts that share a
//! prompt, and the policy ascends the clipped importance-weighted surrogate.
//! Everything here is generic over [`Policy`] and [`RolloutEnv`]; the
//! synthetic judging environment in [`crate::synth`] is one implementation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{RewardError, RewardSpec};

/// Population standard deviations below this are treated as zero.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("group {group} has {found} entries, expected group size {expected}")]
    GroupSizeMismatch {
        group: usize,
        expected: usize,
        found: usize,
    },
    #[error("kl_beta > 0 requires a reference policy")]
    MissingReference,
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// A differentiable stochastic policy over whole trajectories.
pub trait Policy {
    type Sample;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn log_prob(&self, sample: &Self::Sample) -> f64;

    /// Adds `scale * d log pi(sample) / d params` into `grad`.
    fn accumulate_grad_log_prob(&self, sample: &Self::Sample, scale: f64, grad: &mut [f64]);
}

/// An environment that produces trajectories from a policy and scores them.
pub trait RolloutEnv: Sync {
    type Instance: Send + Sync;
    type Trajectory: Send + Sync;
    type Policy: Policy<Sample = Self::Trajectory> + Clone + Sync;

    fn sample_instance<R: Rng>(&self, rng: &mut R) -> Self::Instance;

    fn rollout<R: Rng>(
        &self,
        policy: &Self::Policy,
        instance: &Self::Instance,
        rng: &mut R,
    ) -> Self::Trajectory;

    /// Scalar reward credited to the whole trajectory.
    fn reward(
        &self,
        trajectory: &Self::Trajectory,
        instance: &Self::Instance,
        spec: &RewardSpec,
    ) -> Result<f64, RewardError>;

    /// Response-length proxy reported in step statistics.
    fn response_length(&self, trajectory: &Self::Trajectory) -> f64;

    fn format_ok(&self, trajectory: &Self::Trajectory) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub episodes: usize,
    /// Prompts per step. Rollout and training batches are the same batch.
    pub batch_size: usize,
    /// Prompts drawn once per run and revisited every episode.
    pub dataset_size: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.0,
            learning_rate: 0.05,
            max_grad_norm: 1.0,
            episodes: 5,
            batch_size: 16,
            dataset_size: 128,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.group_size < 2 {
            out.push(format!("grpo.group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            out.push(format!("grpo.clip_eps must be > 0, got {}", self.clip_eps));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            out.push(format!("grpo.kl_beta must be >= 0, got {}", self.kl_beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("grpo.learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            out.push(format!("grpo.max_grad_norm must be > 0, got {}", self.max_grad_norm));
        }
        if self.batch_size == 0 {
            out.push("grpo.batch_size must be >= 1".to_string());
        }
        if self.dataset_size < self.batch_size {
            out.push(format!(
                "grpo.dataset_size ({}) must be >= grpo.batch_size ({})",
                self.dataset_size, self.batch_size
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GrpoError::Config(problems))
        }
    }

    pub fn steps_per_episode(&self) -> usize {
        self.dataset_size / self.batch_size.max(1)
    }

    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode()
    }
}

/// `(r_i - mean) / std` with the population std; all zeros for a flat group.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < ADVANTAGE_STD_FLOOR {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Pessimistic clipped surrogate `min(ratio * A, clip(ratio) * A)`.
pub fn surrogate_term(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> f64 {
    surrogate_with_slope(logp_new, logp_old, advantage, eps).0
}

/// Surrogate value and its derivative with respect to `logp_new`.
fn surrogate_with_slope(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Per-sample KL estimator `exp(d) - d - 1` with `d = logp_ref - logp_new`.
pub fn kl_penalty(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp_m1() - d
}

/// G rollouts of one prompt with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup<T> {
    pub prompt_id: usize,
    pub trajectories: Vec<T>,
    /// Log-probabilities under the policy that generated the rollouts.
    pub old_logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl<T> RolloutGroup<T> {
    pub fn new(
        prompt_id: usize,
        trajectories: Vec<T>,
        old_logp: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            prompt_id,
            trajectories,
            old_logp,
            rewards,
            advantages,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Mean over groups of the mean clipped surrogate, minus `beta` times KL.
///
/// The gradient flows only through the current policy's log-probabilities;
/// samples on the active clipped branch contribute nothing.
pub fn grpo_objective<P: Policy>(
    groups: &[RolloutGroup<P::Sample>],
    policy: &P,
    reference: Option<&P>,
    config: &GrpoConfig,
) -> Result<Objective, GrpoError> {
    let dim = policy.params().len();
    let mut gradient = vec![0.0; dim];
    if groups.is_empty() {
        return Ok(Objective { value: 0.0, gradient });
    }
    let beta = config.kl_beta;
    if beta > 0.0 && reference.is_none() {
        return Err(GrpoError::MissingReference);
    }
    let mut value = 0.0;
    let n_groups = groups.len() as f64;
    for (gi, group) in groups.iter().enumerate() {
        let g = config.group_size;
        for found in [
            group.trajectories.len(),
            group.old_logp.len(),
            group.rewards.len(),
            group.advantages.len(),
        ] {
            if found != g {
                return Err(GrpoError::GroupSizeMismatch {
                    group: gi,
                    expected: g,
                    found,
                });
            }
        }
        let weight = 1.0 / (n_groups * g as f64);
        for i in 0..g {
            let sample = &group.trajectories[i];
            let logp = policy.log_prob(sample);
            let (surr, mut slope) =
                surrogate_with_slope(logp, group.old_logp[i], group.advantages[i], config.clip_eps);
            let mut term = surr;
            if beta > 0.0 {
                let logp_ref = reference.expect("checked above").log_prob(sample);
                term -= beta * kl_penalty(logp, logp_ref);
                // d/dlogp of -beta * (exp(d) - d - 1), d = logp_ref - logp
                slope += beta * (logp_ref - logp).exp_m1();
            }
            value += weight * term;
            if slope != 0.0 {
                policy.accumulate_grad_log_prob(sample, weight * slope, &mut gradient);
            }
        }
    }
    Ok(Objective { value, gradient })
}

/// Summary of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    /// Mean response-length proxy over all rollouts of the step.
    pub mean_depth: f64,
    pub format_rate: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub objective: f64,
}

impl StepStats {
    pub const CSV_HEADER: &'static str = "step,mean_reward,mean_depth,format_rate,grad_norm,objective";

    pub fn csv_row(&self) -> String {
        let cols = [self.mean_reward, self.mean_depth, self.format_rate, self.grad_norm, self.objective];
        let mut row = self.step.to_string();
        for v in cols {
            row.push(',');
            row.push_str(&fixed6(v));
        }
        row
    }
}

/// `{:.6}` without a sign on values that round to zero.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(StepStats::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Flat parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(step: usize, params: &[f64]) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            step,
            params: params.to_vec(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes several integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

// Stream tags keep dataset, shuffle and rollout streams disjoint.
const STREAM_ROLLOUT: u64 = 1;
const STREAM_DATASET: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

/// Independent random stream for one rollout.
pub fn rollout_rng(seed: u64, step: usize, prompt: usize, rollout: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[
        STREAM_ROLLOUT,
        seed,
        step as u64,
        prompt as u64,
        rollout as u64,
    ]))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Generates G rollouts per prompt. Each rollout draws from its own stream,
/// so the result does not depend on how rayon schedules the work.
pub fn collect_groups<E: RolloutEnv>(
    env: &E,
    policy: &E::Policy,
    instances: &[&E::Instance],
    spec: &RewardSpec,
    config: &GrpoConfig,
    step: usize,
) -> Result<Vec<RolloutGroup<E::Trajectory>>, GrpoError> {
    instances
        .par_iter()
        .enumerate()
        .map(|(p, instance)| {
            let mut trajectories = Vec::with_capacity(config.group_size);
            let mut old_logp = Vec::with_capacity(config.group_size);
            let mut rewards = Vec::with_capacity(config.group_size);
            for i in 0..config.group_size {
                let mut rng = rollout_rng(config.seed, step, p, i);
                let t = env.rollout(policy, instance, &mut rng);
                rewards.push(env.reward(&t, instance, spec)?);
                old_logp.push(policy.log_prob(&t));
                trajectories.push(t);
            }
            RolloutGroup::new(p, trajectories, old_logp, rewards)
        })
        .collect()
}

/// One on-policy update: rollouts, advantages, clipped ascent step.
pub fn grpo_step<E: RolloutEnv>(
    policy: &mut E::Policy,
    env: &E,
    instances: &[&E::Instance],
    spec: &RewardSpec,
    config: &GrpoConfig,
    reference: Option<&E::Policy>,
    step: usize,
) -> Result<StepStats, GrpoError> {
    let groups = collect_groups(env, policy, instances, spec, config, step)?;
    let objective = grpo_objective(&groups, policy, reference, config)?;

    let grad_norm = l2_norm(&objective.gradient);
    if config.learning_rate > 0.0 && grad_norm > 0.0 {
        let scale = if grad_norm > config.max_grad_norm {
            config.max_grad_norm / grad_norm
        } else {
            1.0
        };
        let lr = config.learning_rate * scale;
        for (p, g) in policy.params_mut().iter_mut().zip(&objective.gradient) {
            *p += lr * g;
        }
    }

    let n = (groups.len() * config.group_size) as f64;
    let (mut reward_sum, mut depth_sum, mut format_count) = (0.0, 0.0, 0usize);
    for group in &groups {
        reward_sum += group.rewards.iter().sum::<f64>();
        for t in &group.trajectories {
            depth_sum += env.response_length(t);
            format_count += usize::from(env.format_ok(t));
        }
    }
    Ok(StepStats {
        step,
        mean_reward: reward_sum / n,
        mean_depth: depth_sum / n,
        format_rate: format_count as f64 / n,
        grad_norm,
        objective: objective.value,
    })
}

/// Runs `episodes * (dataset_size / batch_size)` steps.
///
/// The dataset is sampled once from the seed; each episode visits it in a
/// seed-determined shuffled order. `observer` sees the policy after every
/// step. When `kl_beta > 0` the initial policy is the KL reference.
pub fn train_with<E, F>(
    policy: &mut E::Policy,
    env: &E,
    spec: &RewardSpec,
    config: &GrpoConfig,
    mut observer: F,
) -> Result<TrainLog, GrpoError>
where
    E: RolloutEnv,
    F: FnMut(&StepStats, &E::Policy),
{
    config.validate()?;
    spec.validate()?;
    let mut log = TrainLog::default();
    if config.episodes == 0 {
        return Ok(log);
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[STREAM_DATASET, config.seed]));
    let dataset: Vec<E::Instance> = (0..config.dataset_size)
        .map(|_| env.sample_instance(&mut data_rng))
        .collect();
    let reference = (config.kl_beta > 0.0).then(|| policy.clone());

    let mut step = 0;
    for episode in 0..config.episodes {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[STREAM_SHUFFLE, config.seed, episode as u64]));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks_exact(config.batch_size) {
            let batch: Vec<&E::Instance> = chunk.iter().map(|&i| &dataset[i]).collect();
            let stats = grpo_step(policy, env, &batch, spec, config, reference.as_ref(), step)?;
            observer(&stats, policy);
            log.steps.push(stats);
            step += 1;
        }
    }
    Ok(log)
}

pub fn train<E: RolloutEnv>(
    policy: &mut E::Policy,
    env: &E,
    spec: &RewardSpec,
    config: &GrpoConfig,
) -> Result<TrainLog, GrpoError> {
    train_with(policy, env, spec, config, |_, _| {})
}
