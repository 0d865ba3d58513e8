//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reward_lab::experiment::{scenario, ExperimentConfig};
use reward_lab::grpo::{grpo_objective, train_with, GrpoConfig, Policy, RolloutGroup, TrainLog};
use reward_lab::synth::{rollout, EnvConfig, Instance, JudgeEnv, ToyPolicy, Trajectory};

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

/// Textbook raw-sum Pearson formula.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// O(n^2) average ranks: 1 + #smaller + (#equal - 1) / 2.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

/// Series of quarter-steps in `[0, 5]` so ties are common and sums are exact.
pub fn tied_series<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..=20) as f64 / 4.0).collect()
}

pub struct ObjectiveInstance {
    pub groups: Vec<RolloutGroup<Trajectory>>,
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub config: GrpoConfig,
}

fn jitter<R: Rng>(p: &ToyPolicy, scale: f64, rng: &mut R) -> ToyPolicy {
    let params = p
        .params()
        .iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ToyPolicy::from_flat(params).expect("same length")
}

/// A random objective whose rollouts come from a perturbed snapshot, so
/// ratios spread around 1 and some samples sit on the clipped branch.
pub fn random_objective_instance(seed: u64) -> ObjectiveInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_depth = rng.random_range(1..=18);
    let env = EnvConfig {
        max_depth,
        ..EnvConfig::default()
    };
    let logits = (0..=max_depth).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let policy = ToyPolicy::new(logits, rng.sample(StandardNormal));
    let old = jitter(&policy, 0.2, &mut rng);
    let reference = jitter(&policy, 0.3, &mut rng);
    let group_size = rng.random_range(2..=8);
    let config = GrpoConfig {
        group_size,
        kl_beta: if rng.random_bool(0.5) { 0.1 } else { 0.0 },
        ..GrpoConfig::default()
    };
    let groups = (0..rng.random_range(1..=4))
        .map(|p| {
            let instance = Instance {
                s_gt: 1.0 + 0.25 * rng.random_range(0..=16) as f64,
            };
            let trajectories: Vec<Trajectory> =
                (0..group_size).map(|_| rollout(&old, &instance, &env, &mut rng)).collect();
            let old_logp = trajectories.iter().map(|t| old.log_prob(t)).collect();
            let rewards = (0..group_size).map(|_| rng.sample(StandardNormal)).collect();
            RolloutGroup::new(p, trajectories, old_logp, rewards).unwrap()
        })
        .collect();
    ObjectiveInstance {
        groups,
        policy,
        reference,
        config,
    }
}

impl ObjectiveInstance {
    fn value_at(&self, params: &[f64]) -> f64 {
        let p = ToyPolicy::from_flat(params.to_vec()).unwrap();
        grpo_objective(&self.groups, &p, Some(&self.reference), &self.config)
            .unwrap()
            .value
    }

    /// Smallest distance of any ratio to a clip boundary.
    pub fn kink_distance(&self) -> f64 {
        let eps = self.config.clip_eps;
        let mut d = f64::INFINITY;
        for g in &self.groups {
            for (t, old) in g.trajectories.iter().zip(&g.old_logp) {
                let r = (self.policy.log_prob(t) - old).exp();
                d = d.min((r - (1.0 - eps)).abs()).min((r - (1.0 + eps)).abs());
            }
        }
        d
    }

    /// Relative error between the analytic and central-difference gradients.
    pub fn gradient_relative_error(&self, h: f64) -> (f64, f64) {
        let analytic = grpo_objective(&self.groups, &self.policy, Some(&self.reference), &self.config)
            .unwrap()
            .gradient;
        let base = self.policy.params().to_vec();
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut up = base.clone();
                let mut down = base.clone();
                up[i] += h;
                down[i] -= h;
                (self.value_at(&up) - self.value_at(&down)) / (2.0 * h)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        (diff / scale.max(1e-12), scale)
    }
}

pub struct ScenarioRun {
    pub initial: ToyPolicy,
    pub policy: ToyPolicy,
    pub log: TrainLog,
    /// Modal depth after each step.
    pub modal_depths: Vec<usize>,
}

pub fn scenario_config(name: &str, seed: u64) -> ExperimentConfig {
    scenario(name).expect("known scenario").with_seed(seed)
}

pub fn run_config(cfg: &ExperimentConfig) -> ScenarioRun {
    let env = JudgeEnv::new(cfg.env.clone());
    let initial = cfg.initial_policy();
    let mut policy = initial.clone();
    let mut modal_depths = Vec::new();
    let log = train_with(&mut policy, &env, &cfg.reward, &cfg.grpo, |_, p| {
        modal_depths.push(p.modal_depth())
    })
    .unwrap();
    ScenarioRun {
        initial,
        policy,
        log,
        modal_depths,
    }
}

pub fn run_scenario(name: &str, seed: u64) -> ScenarioRun {
    run_config(&scenario_config(name, seed))
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}
