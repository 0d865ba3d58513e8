//! Stateless HTTP service exposing the composite reward.
//!
//! Endpoints:
//! - `POST /v1/reward`: one [`RewardRequest`] → one [`RewardResponse`].
//! - `POST /v1/reward/batch`: a JSON array of requests → an array of
//!   per-element results or errors, in input order.
//! - `GET /healthz`: version and reward defaults.
//!
//! Bodies are JSON. Reals in responses are rounded to 6 fractional digits.

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use tokio::net::TcpListener;

use crate::reward::{composite_reward, RewardError, RewardKind, RewardSpec, SCORE_MAX, SCORE_MIN};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BATCH: usize = 1024;
pub const ADDR_ENV_VAR: &str = "REWARD_LAB_ADDR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    pub max_batch: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: DEFAULT_ADDR.to_string(),
            max_batch: DEFAULT_MAX_BATCH,
        }
    }
}

impl ServiceConfig {
    /// The environment variable wins over the configured address.
    pub fn resolved_addr(&self) -> String {
        std::env::var(ADDR_ENV_VAR).unwrap_or_else(|_| self.addr.clone())
    }
}

/// Optional overrides of the reward defaults. `kind` stays a string so an
/// unknown value is a semantic error rather than a parse error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFields {
    pub kind: Option<String>,
    pub r_min: Option<f64>,
    pub d_0: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRequest {
    pub response: String,
    pub gt_score: f64,
    #[serde(default)]
    pub spec: SpecFields,
}

fn round6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_to_6(*v))
}

fn round6_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round_to_6(*v)),
        None => s.serialize_none(),
    }
}

/// Rounds through the 6-decimal text form so the wire value matches `{:.6}`.
pub fn round_to_6(v: f64) -> f64 {
    format!("{v:.6}").parse().unwrap_or(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    #[serde(serialize_with = "round6_opt")]
    pub parsed_score: Option<f64>,
    pub format_ok: bool,
    #[serde(serialize_with = "round6")]
    pub r_acc: f64,
    #[serde(serialize_with = "round6")]
    pub r_fmt: f64,
    #[serde(serialize_with = "round6")]
    pub r_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ServiceError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_body", message)
    }

    fn semantic(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<RewardError> for ServiceError {
    fn from(e: RewardError) -> Self {
        let code = match e {
            RewardError::GroundTruthRange(_) => "gt_score_out_of_range",
            RewardError::UnknownKind(_) => "unknown_kind",
            RewardError::RewardFloor(_) => "invalid_r_min",
            RewardError::Threshold(_) => "invalid_d_0",
            RewardError::FormatWeight(_) => "invalid_lambda",
            RewardError::NonFinitePrediction(_) => "non_finite_prediction",
        };
        Self::semantic(code, e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

impl RewardRequest {
    pub fn resolve_spec(&self) -> Result<RewardSpec, ServiceError> {
        let defaults = RewardSpec::default();
        let kind = match &self.spec.kind {
            Some(k) => k.parse::<RewardKind>()?,
            None => defaults.kind,
        };
        let spec = RewardSpec {
            kind,
            r_min: self.spec.r_min.unwrap_or(defaults.r_min),
            d_0: self.spec.d_0.unwrap_or(defaults.d_0),
            lambda: self.spec.lambda.unwrap_or(defaults.lambda),
            normalize_linear_error: false,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Scores one request with the library's composite reward.
pub fn handle_reward(request: &RewardRequest) -> Result<RewardResponse, ServiceError> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&request.gt_score) {
        return Err(RewardError::GroundTruthRange(request.gt_score).into());
    }
    let spec = request.resolve_spec()?;
    let b = composite_reward(&request.response, request.gt_score, &spec)?;
    Ok(RewardResponse {
        parsed_score: b.parsed.score,
        format_ok: b.parsed.format_ok,
        r_acc: b.r_acc,
        r_fmt: b.r_fmt,
        r_total: b.r_total,
    })
}

/// One slot of a batch response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchItem {
    Ok { index: usize, result: RewardResponse },
    Err { index: usize, error: ErrorBody },
}

fn decode_request(value: Value) -> Result<RewardRequest, ServiceError> {
    serde_json::from_value(value).map_err(|e| ServiceError::malformed(e.to_string()))
}

/// Scores each element independently; a bad element never fails the batch.
pub fn handle_batch(requests: Vec<Value>, max_batch: usize) -> Result<Vec<BatchItem>, ServiceError> {
    if requests.len() > max_batch {
        return Err(ServiceError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "batch_too_large",
            format!("batch of {} exceeds the limit of {max_batch}", requests.len()),
        ));
    }
    Ok(requests
        .into_iter()
        .enumerate()
        .map(|(index, v)| match decode_request(v).and_then(|r| handle_reward(&r)) {
            Ok(result) => BatchItem::Ok { index, result },
            Err(e) => BatchItem::Err { index, error: e.body },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDefaults {
    pub kind: RewardKind,
    pub r_min: f64,
    pub d_0: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub defaults: SpecDefaults,
}

pub fn handle_health() -> Health {
    let d = RewardSpec::default();
    Health {
        status: "ok".to_string(),
        version: crate::VERSION.to_string(),
        defaults: SpecDefaults {
            kind: d.kind,
            r_min: d.r_min,
            d_0: d.d_0,
            lambda: d.lambda,
        },
    }
}

#[derive(Debug, Clone)]
struct AppState {
    max_batch: usize,
}

fn log_request(path: &str, status: StatusCode) {
    tracing::info!(target: "reward_lab::service", "{path} {}", status.as_u16());
}

async fn reward_endpoint(body: Bytes) -> Response {
    let outcome = serde_json::from_slice::<Value>(&body)
        .map_err(|e| ServiceError::malformed(e.to_string()))
        .and_then(decode_request)
        .and_then(|r| handle_reward(&r));
    let response = match outcome {
        Ok(r) => (StatusCode::OK, Json(r)).into_response(),
        Err(e) => e.into_response(),
    };
    log_request("/v1/reward", response.status());
    response
}

async fn batch_endpoint(State(state): State<AppState>, body: Bytes) -> Response {
    let outcome = serde_json::from_slice::<Vec<Value>>(&body)
        .map_err(|e| ServiceError::malformed(e.to_string()))
        .and_then(|v| handle_batch(v, state.max_batch));
    let response = match outcome {
        Ok(items) => (StatusCode::OK, Json(items)).into_response(),
        Err(e) => e.into_response(),
    };
    log_request("/v1/reward/batch", response.status());
    response
}

async fn health_endpoint() -> Response {
    let response = Json(handle_health()).into_response();
    log_request("/healthz", response.status());
    response
}

pub fn router(config: &ServiceConfig) -> Router {
    Router::new()
        .route("/v1/reward", post(reward_endpoint))
        .route("/v1/reward/batch", post(batch_endpoint))
        .route("/healthz", get(health_endpoint))
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(AppState {
            max_batch: config.max_batch,
        })
}

pub async fn bind(addr: &str) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Serves until the future is dropped or the listener fails.
pub async fn serve(listener: TcpListener, config: &ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

/// Binds an ephemeral local port and serves in the background.
pub async fn spawn_local(config: &ServiceConfig) -> std::io::Result<SocketAddr> {
    let listener = bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = router(config);
    tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(addr)
}
