//! Experiment configuration, scenario presets, run manifests and the
//! command implementations behind the CLI.
//!
//! A config is one TOML file:
//!
//! ```toml
//! scenario = "l1_default"   # optional preset; keys below override it
//! output_dir = "runs/l1"
//! cold_start = "uniform"    # uniform | depth_heavy | depth_zero_locked
//!
//! [env]
//! depth_cost = 0.08
//!
//! [reward]
//! kind = "l1"
//!
//! [grpo]
//! episodes = 250
//!
//! [service]
//! addr = "127.0.0.1:8080"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grpo::{train_with, Checkpoint, GrpoConfig, Policy, TrainLog};
use crate::metrics::{align_by_id, read_scores, CorrelationReport};
use crate::mos::run_pipeline;
use crate::reward::{composite_reward, RewardBreakdown, RewardKind, RewardSpec};
use crate::service::{self, ServiceConfig};
use crate::synth::{EnvConfig, JudgeEnv, OracleTable, ToyPolicy};

pub const CUSTOM_SCENARIO: &str = "custom";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    /// 1 usage, 2 validation, 3 runtime.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Validation(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::Validation(vec![message.into()])
    }
}

fn io_error(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Runtime(format!("{}: {e}", path.display()))
}

/// Initial policy family, standing in for what supervised warm-up leaves behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    /// Flat depth distribution, format coin flip.
    #[default]
    Uniform,
    /// Depth logits ramp from 0 at k = 0 to 2 at k = K; format mostly learned.
    DepthHeavy,
    /// Depth logit 6 at k = 0 and 0 elsewhere; format mostly unlearned.
    DepthZeroLocked,
}

impl ColdStart {
    pub const ALL: [ColdStart; 3] = [Self::Uniform, Self::DepthHeavy, Self::DepthZeroLocked];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::DepthHeavy => "depth_heavy",
            Self::DepthZeroLocked => "depth_zero_locked",
        }
    }

    pub fn initial_policy(self, max_depth: usize) -> ToyPolicy {
        match self {
            Self::Uniform => ToyPolicy::uniform(max_depth, 0.0),
            Self::DepthHeavy => {
                let k = max_depth.max(1) as f64;
                let logits = (0..=max_depth).map(|d| 2.0 * d as f64 / k).collect();
                ToyPolicy::new(logits, 2.0)
            }
            Self::DepthZeroLocked => {
                let mut logits = vec![0.0; max_depth + 1];
                logits[0] = 6.0;
                ToyPolicy::new(logits, -1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub output_dir: PathBuf,
    pub cold_start: ColdStart,
    pub env: EnvConfig,
    pub reward: RewardSpec,
    pub grpo: GrpoConfig,
    pub service: ServiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: CUSTOM_SCENARIO.to_string(),
            output_dir: PathBuf::from("runs"),
            cold_start: ColdStart::default(),
            env: EnvConfig::default(),
            reward: RewardSpec::default(),
            grpo: GrpoConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Steps per episode under the default dataset and batch sizes.
const DEFAULT_STEPS_PER_EPISODE: usize = 8;

fn episodes_for(steps: usize) -> usize {
    steps.div_ceil(DEFAULT_STEPS_PER_EPISODE)
}

/// Floor-saturating gaussian threshold.
pub const SATURATED_D0: f64 = 0.05;

/// Every preset name, in a stable order.
pub fn scenario_names() -> Vec<String> {
    let mut names = vec![
        CUSTOM_SCENARIO.to_string(),
        "l1_default".to_string(),
        "gaussian_saturated".to_string(),
        "gaussian_saturated_locked".to_string(),
    ];
    for kind in RewardKind::ALL {
        for cold in ColdStart::ALL {
            names.push(format!("{}_{}", kind.as_str(), cold.as_str()));
        }
    }
    names
}

/// The preset config for `name`.
///
/// - `l1_default`: K = 6, depth cost 0.08, G = 8, 2000 steps.
/// - `{kind}_{cold_start}`: no depth cost, 200 steps.
/// - `gaussian_saturated`: gaussian with d_0 = 0.05, uniform start, 200 steps.
/// - `gaussian_saturated_locked`: same reward, locked start, 504 steps.
pub fn scenario(name: &str) -> Option<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        scenario: name.to_string(),
        output_dir: PathBuf::from("runs").join(name),
        ..ExperimentConfig::default()
    };
    match name {
        CUSTOM_SCENARIO => cfg.output_dir = PathBuf::from("runs"),
        "l1_default" => {
            cfg.env.depth_cost = 0.08;
            cfg.grpo.episodes = episodes_for(2000);
        }
        "gaussian_saturated" | "gaussian_saturated_locked" => {
            cfg.reward = RewardSpec {
                d_0: SATURATED_D0,
                ..RewardSpec::with_kind(RewardKind::Gaussian)
            };
            if name.ends_with("_locked") {
                cfg.cold_start = ColdStart::DepthZeroLocked;
                cfg.grpo.episodes = episodes_for(500);
            } else {
                cfg.grpo.episodes = episodes_for(200);
            }
        }
        _ => {
            let (kind, cold) = RewardKind::ALL.iter().find_map(|k| {
                let rest = name.strip_prefix(k.as_str())?.strip_prefix('_')?;
                let cold = ColdStart::ALL.into_iter().find(|c| c.as_str() == rest)?;
                Some((*k, cold))
            })?;
            cfg.reward = RewardSpec::with_kind(kind);
            cfg.cold_start = cold;
            cfg.grpo.episodes = episodes_for(200);
        }
    }
    Some(cfg)
}

/// Lists keys in `given` that `schema` lacks and removes them from `given`.
fn strip_unknown_keys(given: &mut toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    let keys: Vec<String> = given.keys().cloned().collect();
    for key in keys {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match schema.get(&key) {
            None => {
                out.push(format!("unknown key `{path}`"));
                given.remove(&key);
            }
            Some(toml::Value::Table(sub_schema)) => {
                if let Some(toml::Value::Table(sub)) = given.get_mut(&key) {
                    strip_unknown_keys(sub, sub_schema, &path, out);
                }
            }
            Some(_) => {}
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn to_table(cfg: &ExperimentConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("config serializes to a table")
}

impl ExperimentConfig {
    /// Parses, applies the named preset, then validates. Reports every
    /// unknown key and every violated constraint together.
    pub fn from_toml_str(text: &str, scenario_override: Option<&str>) -> Result<Self, ExperimentError> {
        let mut given: toml::Table =
            toml::from_str(text).map_err(|e| ExperimentError::invalid(format!("config is not valid TOML: {e}")))?;
        if let Some(name) = scenario_override {
            given.insert("scenario".into(), toml::Value::String(name.to_string()));
        }
        let name = match given.get("scenario") {
            None => CUSTOM_SCENARIO.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => {
                return Err(ExperimentError::invalid(format!(
                    "`scenario` must be a string, got {}",
                    other.type_str()
                )))
            }
        };
        let Some(preset) = scenario(&name) else {
            return Err(ExperimentError::invalid(format!(
                "unknown scenario `{name}`; known: {}",
                scenario_names().join(", ")
            )));
        };

        let mut problems = Vec::new();
        let mut base = to_table(&preset);
        strip_unknown_keys(&mut given, &to_table(&ExperimentConfig::default()), "", &mut problems);
        merge_tables(&mut base, given);
        match toml::Value::Table(base).try_into::<ExperimentConfig>() {
            Ok(cfg) => {
                problems.extend(cfg.problems());
                if problems.is_empty() {
                    Ok(cfg)
                } else {
                    Err(ExperimentError::Validation(problems))
                }
            }
            Err(e) => {
                problems.push(e.to_string().trim().to_string());
                Err(ExperimentError::Validation(problems))
            }
        }
    }

    pub fn load(path: Option<&Path>, scenario_override: Option<&str>) -> Result<Self, ExperimentError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| io_error(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, scenario_override)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.env.problems();
        out.extend(self.reward.problems());
        out.extend(self.grpo.problems());
        if self.service.max_batch == 0 {
            out.push("service.max_batch must be >= 1".to_string());
        }
        out
    }

    /// Applies the global seed to both the environment and the trainer.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.env.seed = seed;
        self.grpo.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the config as key-sorted JSON, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        sha256_hex(value.to_string().as_bytes())
    }

    pub fn initial_policy(&self) -> ToyPolicy {
        self.cold_start.initial_policy(self.env.max_depth)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<InputDigest>,
    /// Paths relative to the output directory, including the manifest itself.
    pub files: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes `files` and then a manifest listing them into `dir`.
fn write_run(
    dir: &Path,
    mut manifest: RunManifest,
    files: Vec<(&str, String)>,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut written = Vec::new();
    for (name, contents) in &files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        written.push(path);
    }
    manifest.files = files.iter().map(|(n, _)| n.to_string()).collect();
    manifest.files.push(MANIFEST_FILE.to_string());
    manifest.finished_at = now();
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, body).map_err(|e| io_error(&path, e))?;
    written.push(path);
    Ok(written)
}

fn manifest_for(command: &str, cfg: &ExperimentConfig, seed: u64, inputs: Vec<InputDigest>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        scenario: cfg.scenario.clone(),
        config_hash: cfg.hash(),
        seed,
        started_at: now(),
        finished_at: String::new(),
        inputs,
        files: Vec::new(),
    }
}

fn read_input(path: &Path) -> Result<(Vec<u8>, InputDigest), ExperimentError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let digest = InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    Ok((bytes, digest))
}

pub struct MosOutcome {
    pub output: crate::mos::PipelineOutput,
    pub files: Vec<PathBuf>,
}

/// Ratings CSV → `mos.csv`, `zscores.csv`, `screening.json`. Nothing is
/// written unless the whole pipeline succeeds.
pub fn cmd_mos(input: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<MosOutcome, ExperimentError> {
    let (bytes, digest) = read_input(input)?;
    let mut manifest = manifest_for("mos", cfg, 0, vec![digest]);
    manifest.scenario = CUSTOM_SCENARIO.to_string();
    let output = run_pipeline(bytes.as_slice(), 1.0, 5.0)
        .map_err(|e| ExperimentError::invalid(format!("{}: {e}", input.display())))?;
    let files = write_run(
        out_dir,
        manifest,
        vec![
            ("mos.csv", output.table.to_csv()),
            ("zscores.csv", output.z_table.to_csv()),
            ("screening.json", output.screening.to_json()),
        ],
    )?;
    Ok(MosOutcome { output, files })
}

/// Aligns two `id,score` files and writes `correlation.csv`.
pub fn cmd_eval(
    pred: &Path,
    gt: &Path,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(CorrelationReport, Vec<PathBuf>), ExperimentError> {
    let (pred_bytes, pred_digest) = read_input(pred)?;
    let (gt_bytes, gt_digest) = read_input(gt)?;
    let manifest = manifest_for("eval", cfg, 0, vec![pred_digest, gt_digest]);
    let p = read_scores(pred_bytes.as_slice())
        .map_err(|e| ExperimentError::invalid(format!("{}: {e}", pred.display())))?;
    let g = read_scores(gt_bytes.as_slice())
        .map_err(|e| ExperimentError::invalid(format!("{}: {e}", gt.display())))?;
    let series = align_by_id(&p, &g).map_err(|e| ExperimentError::invalid(e.to_string()))?;
    let report = CorrelationReport::compute(&series).map_err(|e| ExperimentError::invalid(e.to_string()))?;
    let files = write_run(out_dir, manifest, vec![("correlation.csv", report.to_csv())])?;
    Ok((report, files))
}

pub fn cmd_reward(response: &str, gt: f64, spec: &RewardSpec) -> Result<RewardBreakdown, ExperimentError> {
    composite_reward(response, gt, spec).map_err(|e| ExperimentError::invalid(e.to_string()))
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub initial: ToyPolicy,
    pub policy: ToyPolicy,
    pub files: Vec<PathBuf>,
}

/// Trains the toy policy on the synthetic environment and writes
/// `train_log.csv`, `checkpoint.json` and the manifest.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome, ExperimentError> {
    let manifest = manifest_for("train", cfg, cfg.grpo.seed, Vec::new());
    let env = JudgeEnv::new(cfg.env.clone());
    let initial = cfg.initial_policy();
    let mut policy = initial.clone();
    let every = (cfg.grpo.total_steps() / 10).max(1);
    let log = train_with(&mut policy, &env, &cfg.reward, &cfg.grpo, |s, p| {
        if (s.step + 1) % every == 0 {
            tracing::info!(
                step = s.step,
                mean_reward = s.mean_reward,
                mean_depth = s.mean_depth,
                format_rate = s.format_rate,
                modal_depth = p.modal_depth(),
                "train"
            );
        }
    })
    .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let checkpoint = Checkpoint::new(log.len(), policy.params());
    let files = write_run(
        out_dir,
        manifest,
        vec![
            ("train_log.csv", log.to_csv()),
            ("checkpoint.json", serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes") + "\n"),
        ],
    )?;
    Ok(TrainOutcome {
        log,
        initial,
        policy,
        files,
    })
}

/// Builds the expected-reward table and writes `oracle.csv`.
pub fn cmd_oracle(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(OracleTable, Vec<PathBuf>), ExperimentError> {
    let manifest = manifest_for("oracle", cfg, cfg.env.seed, Vec::new());
    let table = OracleTable::build(&cfg.env, &cfg.reward).map_err(|e| ExperimentError::invalid(e.to_string()))?;
    let files = write_run(out_dir, manifest, vec![("oracle.csv", table.to_csv())])?;
    Ok((table, files))
}

/// Serves the reward endpoints until interrupted.
pub fn cmd_serve(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let addr = cfg.service.resolved_addr();
    runtime.block_on(async {
        let listener = service::bind(&addr)
            .await
            .map_err(|e| ExperimentError::Runtime(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| ExperimentError::Runtime(e.to_string()))?;
        tracing::info!("listening on {local}");
        axum::serve(listener, service::router(&cfg.service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ExperimentError::Runtime(e.to_string()))
    })
}
