//! Verifiable-reward workbench for quality-judging policies.
//!
//! - [`mos`]: subjective ratings to screened, normalized MOS tables.
//! - [`metrics`]: PLCC, SROCC and MainScore.
//! - [`reward`]: response parsing, shaped accuracy rewards, composite reward.
//! - [`grpo`]: group-relative advantages and the clipped policy-gradient loop.
//! - [`synth`]: an analytic judging environment with exact log-probabilities.
//! - [`service`]: HTTP endpoints around the composite reward.
//! - [`experiment`]: configs, scenario presets, run manifests and CLI commands.

pub mod experiment;
pub mod grpo;
pub mod metrics;
pub mod mos;
pub mod reward;
pub mod service;
pub mod synth;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
