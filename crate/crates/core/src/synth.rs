//! Synthetic quality-judging environment.
//!
//! A prompt is a ground-truth score on the 0.25 grid over `[1, 5]`. The toy
//! policy picks a reasoning depth `k` and whether to follow the output
//! format. The environment observes the score with Gaussian noise whose
//! scale shrinks as `base_noise / sqrt(1 + k)`, snaps it to the nearest bin
//! centre and renders a think/answer response. Observation noise belongs to
//! the environment, so a trajectory's log-probability covers only the two
//! policy decisions and is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grpo::{derive_seed, Policy, RolloutEnv};
use crate::reward::{
    composite_reward, derive_params, unfloored_reward, RewardError, RewardKind, RewardSpec,
    SCORE_MAX, SCORE_MIN,
};

/// Monte Carlo samples per oracle cell.
pub const ORACLE_SAMPLES: usize = 1_000_000;

const FILLER: [&str; 6] = [
    "The edit follows the instruction.",
    "The source layout is preserved.",
    "Colours and lighting look consistent.",
    "Fine textures show no obvious artifacts.",
    "The edited region blends with its surroundings.",
    "Overall composition remains coherent.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub max_depth: usize,
    pub base_noise: f64,
    pub bin_width: f64,
    pub depth_cost: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            base_noise: 1.2,
            bin_width: 0.25,
            depth_cost: 0.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.base_noise > 0.0 && self.base_noise.is_finite()) {
            out.push(format!("env.base_noise must be > 0, got {}", self.base_noise));
        }
        let bins = (SCORE_MAX - SCORE_MIN) / self.bin_width;
        if !(self.bin_width > 0.0 && (bins - bins.round()).abs() < 1e-9 && bins.round() >= 1.0) {
            out.push(format!(
                "env.bin_width must divide the score span 4 exactly, got {}",
                self.bin_width
            ));
        }
        if !(self.depth_cost >= 0.0 && self.depth_cost.is_finite()) {
            out.push(format!("env.depth_cost must be >= 0, got {}", self.depth_cost));
        }
        out
    }

    /// Observation noise at depth `k`.
    pub fn noise_at(&self, k: usize) -> f64 {
        self.base_noise / ((1 + k) as f64).sqrt()
    }

    /// Number of bin steps across `[1, 5]`; bin centres sit at `1 + j * w`.
    pub fn bin_steps(&self) -> usize {
        ((SCORE_MAX - SCORE_MIN) / self.bin_width).round() as usize
    }

    pub fn bin_center(&self, j: usize) -> f64 {
        SCORE_MIN + j as f64 * self.bin_width
    }

    /// Clamps to `[1, 5]` and snaps to the nearest centre, ties to the lower one.
    pub fn snap(&self, observed: f64) -> f64 {
        let x = (observed.clamp(SCORE_MIN, SCORE_MAX) - SCORE_MIN) / self.bin_width;
        let lower = x.floor();
        let j = if x - lower > 0.5 { lower + 1.0 } else { lower };
        self.bin_center((j as usize).min(self.bin_steps()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instance {
    pub s_gt: f64,
}

pub fn sample_instance<R: Rng>(env: &EnvConfig, rng: &mut R) -> Instance {
    let j = rng.random_range(0..=env.bin_steps());
    Instance {
        s_gt: env.bin_center(j),
    }
}

/// Depth logits followed by the format logit, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    params: Vec<f64>,
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ToyPolicy {
    pub fn new(depth_logits: Vec<f64>, format_logit: f64) -> Self {
        let mut params = depth_logits;
        params.push(format_logit);
        Self { params }
    }

    pub fn uniform(max_depth: usize, format_logit: f64) -> Self {
        Self::new(vec![0.0; max_depth + 1], format_logit)
    }

    /// Rebuilds a policy from a flat parameter vector (depth logits, then format).
    pub fn from_flat(params: Vec<f64>) -> Option<Self> {
        (params.len() >= 2 && params.iter().all(|p| p.is_finite())).then_some(Self { params })
    }

    pub fn max_depth(&self) -> usize {
        self.params.len() - 2
    }

    pub fn depth_logits(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn format_logit(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn log_depth_probs(&self) -> Vec<f64> {
        let logits = self.depth_logits();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }

    pub fn depth_probs(&self) -> Vec<f64> {
        self.log_depth_probs().into_iter().map(f64::exp).collect()
    }

    pub fn format_prob(&self) -> f64 {
        sigmoid(self.format_logit())
    }

    pub fn mean_depth(&self) -> f64 {
        self.depth_probs()
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Most likely depth, ties toward the smaller depth.
    pub fn modal_depth(&self) -> usize {
        let logits = self.depth_logits();
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        best
    }

    pub fn log_prob_of(&self, depth: usize, format_ok: bool) -> f64 {
        let f = self.format_logit();
        let format_term = if format_ok { log_sigmoid(f) } else { log_sigmoid(-f) };
        self.log_depth_probs()[depth] + format_term
    }
}

impl Policy for ToyPolicy {
    type Sample = Trajectory;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn log_prob(&self, sample: &Trajectory) -> f64 {
        self.log_prob_of(sample.depth, sample.format_ok)
    }

    fn accumulate_grad_log_prob(&self, sample: &Trajectory, scale: f64, grad: &mut [f64]) {
        let probs = self.depth_probs();
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == sample.depth { 1.0 } else { 0.0 };
            grad[k] += scale * (indicator - p);
        }
        let ok = if sample.format_ok { 1.0 } else { 0.0 };
        grad[probs.len()] += scale * (ok - self.format_prob());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub depth: usize,
    pub format_ok: bool,
    pub s_pred: f64,
    pub rendered_text: String,
    pub logp: f64,
}

/// Deterministic response text for a (depth, format, score) triple.
///
/// With the format flag set the text is `<think>` + `depth` filler sentences
/// + `</think><answer>score</answer>`; otherwise it carries no tags.
pub fn render_response(depth: usize, format_ok: bool, s_pred: f64) -> String {
    let reasoning = (0..depth)
        .map(|j| FILLER[j % FILLER.len()])
        .collect::<Vec<_>>()
        .join(" ");
    if format_ok {
        format!("<think>{reasoning}</think><answer>{s_pred}</answer>")
    } else if reasoning.is_empty() {
        format!("Score: {s_pred}")
    } else {
        format!("{reasoning} Score: {s_pred}")
    }
}

impl Trajectory {
    pub fn render(&self) -> String {
        render_response(self.depth, self.format_ok, self.s_pred)
    }
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Samples one trajectory. Draw order is fixed: depth, format, noise.
pub fn rollout<R: Rng>(
    policy: &ToyPolicy,
    instance: &Instance,
    env: &EnvConfig,
    rng: &mut R,
) -> Trajectory {
    let depth = sample_categorical(&policy.depth_probs(), rng);
    let format_ok = rng.random::<f64>() < policy.format_prob();
    let noise: f64 = rng.sample(StandardNormal);
    let s_pred = env.snap(instance.s_gt + env.noise_at(depth) * noise);
    Trajectory {
        depth,
        format_ok,
        s_pred,
        rendered_text: render_response(depth, format_ok, s_pred),
        logp: policy.log_prob_of(depth, format_ok),
    }
}

/// The environment bound to a reward-independent config.
#[derive(Debug, Clone)]
pub struct JudgeEnv {
    pub config: EnvConfig,
}

impl JudgeEnv {
    pub fn new(config: EnvConfig) -> Self {
        Self { config }
    }
}

impl RolloutEnv for JudgeEnv {
    type Instance = Instance;
    type Trajectory = Trajectory;
    type Policy = ToyPolicy;

    fn sample_instance<R: Rng>(&self, rng: &mut R) -> Instance {
        sample_instance(&self.config, rng)
    }

    fn rollout<R: Rng>(&self, policy: &ToyPolicy, instance: &Instance, rng: &mut R) -> Trajectory {
        rollout(policy, instance, &self.config, rng)
    }

    /// Composite reward of the rendered text minus the depth cost.
    fn reward(
        &self,
        trajectory: &Trajectory,
        instance: &Instance,
        spec: &RewardSpec,
    ) -> Result<f64, RewardError> {
        let breakdown = composite_reward(&trajectory.rendered_text, instance.s_gt, spec)?;
        Ok(breakdown.r_total - self.config.depth_cost * trajectory.depth as f64)
    }

    fn response_length(&self, trajectory: &Trajectory) -> f64 {
        trajectory.depth as f64
    }

    fn format_ok(&self, trajectory: &Trajectory) -> bool {
        trajectory.format_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCell {
    pub depth: usize,
    pub format_ok: bool,
    pub expected_reward: f64,
    pub stderr: f64,
}

/// Expected training reward for a fixed (depth, format) choice.
///
/// Averages over ground truth and observation noise by Monte Carlo with
/// `samples` draws from a stream fixed by `env.seed` and `depth`. An
/// unformatted response scores 0, so that cell is exactly `-c * k`.
pub fn oracle_expected_reward_with(
    env: &EnvConfig,
    spec: &RewardSpec,
    depth: usize,
    format_ok: bool,
    samples: usize,
) -> Result<OracleCell, RewardError> {
    let cost = env.depth_cost * depth as f64;
    if !format_ok {
        return Ok(OracleCell {
            depth,
            format_ok,
            expected_reward: -cost,
            stderr: 0.0,
        });
    }
    let params = derive_params(spec)?;
    let sigma = env.noise_at(depth);
    let linear_raw = matches!(spec.kind, RewardKind::L1 | RewardKind::L2) && !spec.normalize_linear_error;
    let error_scale = if linear_raw { 1.0 } else { 1.0 / (SCORE_MAX - SCORE_MIN) };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[0x0AC1E, env.seed, depth as u64]));
    // Welford running mean/variance of the accuracy term
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=samples {
        let s_gt = sample_instance(env, &mut rng).s_gt;
        let noise: f64 = rng.sample(StandardNormal);
        let s_pred = env.snap(s_gt + sigma * noise);
        let error = (s_pred - s_gt).abs() * error_scale;
        let r = unfloored_reward(params, spec.kind, error).max(spec.r_min);
        let delta = r - mean;
        mean += delta / n as f64;
        m2 += delta * (r - mean);
    }
    let var = if samples > 1 { m2 / (samples - 1) as f64 } else { 0.0 };
    Ok(OracleCell {
        depth,
        format_ok,
        expected_reward: mean + spec.lambda - cost,
        stderr: (var / samples as f64).sqrt(),
    })
}

pub fn oracle_expected_reward(
    env: &EnvConfig,
    spec: &RewardSpec,
    depth: usize,
    format_ok: bool,
) -> Result<OracleCell, RewardError> {
    oracle_expected_reward_with(env, spec, depth, format_ok, ORACLE_SAMPLES)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTable {
    pub cells: Vec<OracleCell>,
    pub optimal_depth: usize,
}

impl OracleTable {
    pub fn build(env: &EnvConfig, spec: &RewardSpec) -> Result<Self, RewardError> {
        Self::build_with(env, spec, ORACLE_SAMPLES)
    }

    pub fn build_with(env: &EnvConfig, spec: &RewardSpec, samples: usize) -> Result<Self, RewardError> {
        use rayon::prelude::*;
        let cells = (0..=env.max_depth)
            .into_par_iter()
            .flat_map_iter(|k| [true, false].map(|ok| (k, ok)))
            .map(|(k, ok)| oracle_expected_reward_with(env, spec, k, ok, samples))
            .collect::<Result<Vec<_>, _>>()?;
        let optimal_depth = argmax_depth(&cells);
        Ok(Self { cells, optimal_depth })
    }

    pub fn formatted(&self, depth: usize) -> &OracleCell {
        self.cells
            .iter()
            .find(|c| c.depth == depth && c.format_ok)
            .expect("every depth has a formatted cell")
    }

    /// Largest minus smallest formatted expected reward across depths.
    pub fn formatted_gap(&self) -> f64 {
        let values = self.cells.iter().filter(|c| c.format_ok).map(|c| c.expected_reward);
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }

    /// `k,format,expected_reward,stderr` at 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,format,expected_reward,stderr\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                c.depth,
                u8::from(c.format_ok),
                c.expected_reward,
                c.stderr
            ));
        }
        out
    }
}

fn argmax_depth(cells: &[OracleCell]) -> usize {
    let mut best: Option<&OracleCell> = None;
    for c in cells.iter().filter(|c| c.format_ok) {
        if best.is_none_or(|b| c.expected_reward > b.expected_reward) {
            best = Some(c);
        }
    }
    best.map_or(0, |c| c.depth)
}

/// Depth maximizing the formatted expected reward, ties toward smaller depth.
pub fn oracle_optimal_depth(env: &EnvConfig, spec: &RewardSpec) -> Result<usize, RewardError> {
    Ok(OracleTable::build(env, spec)?.optimal_depth)
}
