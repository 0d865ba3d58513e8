//! Verifiable composite reward for score-emitting responses.
//!
//! A response earns a binary format reward when it follows the
//! `<think>...</think><answer>...</answer>` contract with a numeric answer,
//! and a shaped accuracy reward that decays with the distance between the
//! predicted and ground-truth scores. The total is `r_acc + lambda * r_fmt`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest and highest ground-truth score accepted by the accuracy reward.
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

/// Width of the score range, used to normalize errors into `[0, 1]`.
const SCORE_SPAN: f64 = SCORE_MAX - SCORE_MIN;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("r_min must lie in (0, 1), got {0}")]
    RewardFloor(f64),
    #[error("d_0 must be positive and finite, got {0}")]
    Threshold(f64),
    #[error("lambda must be non-negative and finite, got {0}")]
    FormatWeight(f64),
    #[error("ground-truth score {0} outside [1, 5]")]
    GroundTruthRange(f64),
    #[error("predicted score {0} is not finite")]
    NonFinitePrediction(f64),
    #[error("unknown reward kind `{0}` (expected l1, l2, laplacian or gaussian)")]
    UnknownKind(String),
}

/// Shape family of the accuracy reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    L1,
    L2,
    Laplacian,
    Gaussian,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [
        RewardKind::L1,
        RewardKind::L2,
        RewardKind::Laplacian,
        RewardKind::Gaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::L1 => "l1",
            RewardKind::L2 => "l2",
            RewardKind::Laplacian => "laplacian",
            RewardKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardKind {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(RewardKind::L1),
            "l2" => Ok(RewardKind::L2),
            "laplacian" => Ok(RewardKind::Laplacian),
            "gaussian" => Ok(RewardKind::Gaussian),
            other => Err(RewardError::UnknownKind(other.to_string())),
        }
    }
}

/// Reward family selection plus the two shape hyperparameters.
///
/// `r_min` is the floor the accuracy reward never drops below, and `d_0` is
/// the error at which the unfloored curve reaches `r_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub r_min: f64,
    pub d_0: f64,
    pub lambda: f64,
    /// Put l1/l2 on the normalized `|s_pred - s_gt| / 4` scale as well.
    #[serde(default)]
    pub normalize_linear_error: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            kind: RewardKind::L1,
            r_min: 0.05,
            d_0: 1.0,
            lambda: 1.0,
            normalize_linear_error: false,
        }
    }
}

impl RewardSpec {
    pub fn with_kind(kind: RewardKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.r_min > 0.0 && self.r_min < 1.0) {
            return Err(RewardError::RewardFloor(self.r_min));
        }
        if !(self.d_0 > 0.0 && self.d_0.is_finite()) {
            return Err(RewardError::Threshold(self.d_0));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RewardError::FormatWeight(self.lambda));
        }
        Ok(())
    }

    /// Every violated constraint, prefixed with the config section name.
    pub fn problems(&self) -> Vec<String> {
        let checks = [
            (!(self.r_min > 0.0 && self.r_min < 1.0), RewardError::RewardFloor(self.r_min)),
            (!(self.d_0 > 0.0 && self.d_0.is_finite()), RewardError::Threshold(self.d_0)),
            (!(self.lambda >= 0.0 && self.lambda.is_finite()), RewardError::FormatWeight(self.lambda)),
        ];
        checks
            .into_iter()
            .filter(|(bad, _)| *bad)
            .map(|(_, e)| format!("reward: {e}"))
            .collect()
    }

    /// Error measure fed into the shape formula for this kind.
    fn error_measure(&self, s_pred: f64, s_gt: f64) -> f64 {
        let raw = (s_pred - s_gt).abs();
        match self.kind {
            RewardKind::L1 | RewardKind::L2 if !self.normalize_linear_error => raw,
            _ => raw / SCORE_SPAN,
        }
    }
}

/// Closed-form shape parameter implied by a [`RewardSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivedParams {
    Alpha(f64),
    Tau(f64),
    Sigma(f64),
}

impl DerivedParams {
    pub fn value(self) -> f64 {
        match self {
            DerivedParams::Alpha(v) | DerivedParams::Tau(v) | DerivedParams::Sigma(v) => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivedParams::Alpha(_) => "alpha",
            DerivedParams::Tau(_) => "tau",
            DerivedParams::Sigma(_) => "sigma",
        }
    }
}

pub fn derive_params(spec: &RewardSpec) -> Result<DerivedParams, RewardError> {
    spec.validate()?;
    let log_inv_floor = (1.0 / spec.r_min).ln();
    Ok(match spec.kind {
        RewardKind::L1 => DerivedParams::Alpha((1.0 - spec.r_min) / spec.d_0),
        RewardKind::L2 => DerivedParams::Alpha((1.0 - spec.r_min) / (spec.d_0 * spec.d_0)),
        RewardKind::Laplacian => DerivedParams::Tau(spec.d_0 / log_inv_floor),
        RewardKind::Gaussian => DerivedParams::Sigma(spec.d_0 / (2.0 * log_inv_floor).sqrt()),
    })
}

/// Evaluates the shape curve before the floor is applied.
///
/// `error` is already on the scale the kind expects (see
/// [`RewardSpec::normalize_linear_error`]).
pub fn unfloored_reward(params: DerivedParams, kind: RewardKind, error: f64) -> f64 {
    match (kind, params) {
        (RewardKind::L1, DerivedParams::Alpha(alpha)) => 1.0 - alpha * error,
        (RewardKind::L2, DerivedParams::Alpha(alpha)) => 1.0 - alpha * error * error,
        (RewardKind::Laplacian, DerivedParams::Tau(tau)) => (-error / tau).exp(),
        (RewardKind::Gaussian, DerivedParams::Sigma(sigma)) => {
            (-(error * error) / (2.0 * sigma * sigma)).exp()
        }
        _ => unreachable!("derived parameter does not match reward kind"),
    }
}

/// Shaped accuracy reward in `[r_min, 1]`.
///
/// Predictions outside `[1, 5]` are scored by the formula as-is; only the
/// ground truth is range-checked.
pub fn accuracy_reward(s_pred: f64, s_gt: f64, spec: &RewardSpec) -> Result<f64, RewardError> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&s_gt) {
        return Err(RewardError::GroundTruthRange(s_gt));
    }
    if !s_pred.is_finite() {
        return Err(RewardError::NonFinitePrediction(s_pred));
    }
    let params = derive_params(spec)?;
    let error = spec.error_measure(s_pred, s_gt);
    Ok(unfloored_reward(params, spec.kind, error).max(spec.r_min))
}

/// Outcome of checking a response against the output contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParsedResponse {
    pub format_ok: bool,
    pub score: Option<f64>,
}

impl ParsedResponse {
    const REJECTED: ParsedResponse = ParsedResponse {
        format_ok: false,
        score: None,
    };
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Checks the think/answer contract and extracts the numeric answer.
///
/// Each of the four tags must appear exactly once, in the order
/// think-open, think-close, answer-open, answer-close. Only whitespace may
/// appear outside the two blocks. The answer body, trimmed, must be a plain
/// decimal number (no exponent, no `inf`/`nan`).
pub fn parse_response(text: &str) -> ParsedResponse {
    let tags = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
    let mut positions = [0usize; 4];
    for (slot, tag) in positions.iter_mut().zip(tags) {
        let mut hits = text.match_indices(tag);
        match (hits.next(), hits.next()) {
            (Some((at, _)), None) => *slot = at,
            _ => return ParsedResponse::REJECTED,
        }
    }
    if !positions.windows(2).all(|w| w[0] < w[1]) {
        return ParsedResponse::REJECTED;
    }
    let [think_open, think_close, answer_open, answer_close] = positions;
    let think_body = &text[think_open + THINK_OPEN.len()..think_close];
    let between = &text[think_close + THINK_CLOSE.len()..answer_open];
    let answer_body = &text[answer_open + ANSWER_OPEN.len()..answer_close];
    let before = &text[..think_open];
    let after = &text[answer_close + ANSWER_CLOSE.len()..];

    // Bodies must not carry stray angle-bracket tags such as a second `<answer`.
    if contains_tag_fragment(think_body) || contains_tag_fragment(answer_body) {
        return ParsedResponse::REJECTED;
    }
    if !(before.trim().is_empty() && between.trim().is_empty() && after.trim().is_empty()) {
        return ParsedResponse::REJECTED;
    }
    match parse_decimal(answer_body.trim()) {
        Some(score) => ParsedResponse {
            format_ok: true,
            score: Some(score),
        },
        None => ParsedResponse::REJECTED,
    }
}

fn contains_tag_fragment(body: &str) -> bool {
    ["<think", "</think", "<answer", "</answer"]
        .iter()
        .any(|t| body.contains(t))
}

/// Accepts `[+-]digits[.digits]` or `[+-].digits`.
fn parse_decimal(s: &str) -> Option<f64> {
    let unsigned = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int_part, frac_part) = match unsigned.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (unsigned, None),
    };
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let valid = all_digits(int_part)
        && frac_part.is_none_or(all_digits)
        && (!int_part.is_empty() || frac_part.is_some_and(|f| !f.is_empty()));
    if !valid {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_total: f64,
    #[serde(skip)]
    pub parsed: ParsedResponse,
}

/// Format reward plus shaped accuracy reward for one response.
///
/// An unparsable response gets `r_acc = 0`; the floor only applies to scores
/// that were actually produced.
pub fn composite_reward(
    text: &str,
    s_gt: f64,
    spec: &RewardSpec,
) -> Result<RewardBreakdown, RewardError> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&s_gt) {
        return Err(RewardError::GroundTruthRange(s_gt));
    }
    spec.validate()?;
    let parsed = parse_response(text);
    let (r_acc, r_fmt) = match parsed.score {
        Some(score) if parsed.format_ok => (accuracy_reward(score, s_gt, spec)?, 1.0),
        _ => (0.0, 0.0),
    };
    Ok(RewardBreakdown {
        r_acc,
        r_fmt,
        r_total: r_acc + spec.lambda * r_fmt,
        parsed,
    })
}
