mod support;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use reward_lab::reward::{composite_reward, RewardKind, RewardSpec};
use reward_lab::service::{round_to_6, router, spawn_local, ServiceConfig};
use serde_json::{json, Value};
use support::testdata;
use tower::ServiceExt;

async fn call(cfg: &ServiceConfig, method: &str, path: &str, body: String) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = router(cfg).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(path: &str, body: Value) -> (StatusCode, Value) {
    call(&ServiceConfig::default(), "POST", path, body.to_string()).await
}

fn golden_requests() -> Vec<(Value, Value)> {
    std::fs::read_to_string(testdata("reward_golden.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            let expected = v.as_object_mut().unwrap().remove("expected").unwrap();
            (v, expected)
        })
        .collect()
}

fn library_spec(req: &Value) -> RewardSpec {
    let s = &req["spec"];
    RewardSpec {
        kind: serde_json::from_value::<RewardKind>(s["kind"].clone()).unwrap(),
        r_min: s["r_min"].as_f64().unwrap(),
        d_0: s["d_0"].as_f64().unwrap(),
        lambda: s["lambda"].as_f64().unwrap(),
        normalize_linear_error: false,
    }
}

#[tokio::test]
async fn golden_vector_replays_bit_identically() {
    let cases = golden_requests();
    for (i, (req, expected)) in cases.iter().enumerate() {
        let (status, body) = post("/v1/reward", req.clone()).await;
        assert_eq!(status, StatusCode::OK, "case {i}: {body}");
        let lib = composite_reward(
            req["response"].as_str().unwrap(),
            req["gt_score"].as_f64().unwrap(),
            &library_spec(req),
        )
        .unwrap();
        for (field, lib_value) in [("r_acc", lib.r_acc), ("r_fmt", lib.r_fmt), ("r_total", lib.r_total)] {
            let wire = body[field].as_f64().unwrap();
            assert_eq!(wire.to_bits(), round_to_6(lib_value).to_bits(), "case {i} {field}");
            assert_eq!(format!("{wire:.6}"), expected[field].as_str().unwrap(), "case {i} {field}");
        }
        assert_eq!(body["format_ok"], expected["format_ok"], "case {i}");
        let parsed = body["parsed_score"].as_f64().map(|v| format!("{v:.6}"));
        assert_eq!(parsed.as_deref(), expected["parsed_score"].as_str(), "case {i}");
    }
}

#[tokio::test]
async fn batch_equals_elementwise_singles() {
    let cases: Vec<Value> = golden_requests().into_iter().map(|(r, _)| r).take(200).collect();
    let (status, batch) = post("/v1/reward/batch", Value::Array(cases.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let items = batch.as_array().unwrap();
    assert_eq!(items.len(), cases.len());
    for (i, req) in cases.iter().enumerate() {
        let (_, single) = post("/v1/reward", req.clone()).await;
        assert_eq!(items[i]["index"], i);
        assert_eq!(items[i]["result"], single, "element {i}");
    }
}

#[tokio::test]
async fn batch_reports_bad_elements_in_place() {
    let body = json!([
        {"response": "<think>a</think><answer>2</answer>", "gt_score": 2.0},
        {"response": "x", "gt_score": 9.0},
        {"gt_score": 2.0},
        {"response": "x", "gt_score": 3.0, "spec": {"kind": "huber"}}
    ]);
    let (status, out) = post("/v1/reward/batch", body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out[0]["result"]["r_total"], 2.0);
    assert_eq!(out[1]["error"]["code"], "gt_score_out_of_range");
    assert_eq!(out[2]["error"]["code"], "malformed_body");
    assert_eq!(out[3]["error"]["code"], "unknown_kind");
    for (i, item) in out.as_array().unwrap().iter().enumerate() {
        assert_eq!(item["index"], i);
    }
}

#[tokio::test]
async fn responses_do_not_depend_on_request_order() {
    let cases: Vec<Value> = golden_requests().into_iter().map(|(r, _)| r).take(64).collect();
    let mut forward = Vec::new();
    for c in &cases {
        forward.push(post("/v1/reward", c.clone()).await.1);
    }
    let mut backward = Vec::new();
    for c in cases.iter().rev() {
        backward.push(post("/v1/reward", c.clone()).await.1);
    }
    backward.reverse();
    assert_eq!(forward, backward);
}

#[tokio::test]
async fn error_statuses() {
    let cfg = ServiceConfig::default();
    let (s, b) = call(&cfg, "POST", "/v1/reward", "{not json".into()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["code"], "malformed_body");

    let (s, b) = post("/v1/reward", json!({"response": "x", "gt_score": 3.0, "extra": 1})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["code"], "malformed_body");

    let (s, b) = post("/v1/reward", json!({"response": "x", "gt_score": 0.5})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["error"]["code"], "gt_score_out_of_range");

    for (field, value, code) in [
        ("kind", json!("huber"), "unknown_kind"),
        ("r_min", json!(1.5), "invalid_r_min"),
        ("d_0", json!(0.0), "invalid_d_0"),
        ("lambda", json!(-1.0), "invalid_lambda"),
    ] {
        let (s, b) = post("/v1/reward", json!({"response": "x", "gt_score": 3.0, "spec": {field: value}})).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{field}");
        assert_eq!(b["error"]["code"], code);
    }

    let small = ServiceConfig {
        max_batch: 2,
        ..ServiceConfig::default()
    };
    let three = Value::Array(vec![json!({"response": "x", "gt_score": 3.0}); 3]).to_string();
    let (s, b) = call(&small, "POST", "/v1/reward/batch", three).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(b["error"]["code"], "batch_too_large");
}

#[tokio::test]
async fn health_reports_defaults() {
    let (s, b) = call(&ServiceConfig::default(), "GET", "/healthz", String::new()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["status"], "ok");
    assert_eq!(b["version"], reward_lab::VERSION);
    assert_eq!(b["defaults"], json!({"kind": "l1", "r_min": 0.05, "d_0": 1.0, "lambda": 1.0}));
}

#[tokio::test]
async fn live_server_answers_and_port_is_exclusive() {
    let addr = spawn_local(&ServiceConfig::default()).await.unwrap();
    let text = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut text = String::new();
        stream.read_to_string(&mut text).unwrap();
        text
    })
    .await
    .unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    assert!(text.contains("\"status\":\"ok\""));

    assert!(reward_lab::service::bind(&addr.to_string()).await.is_err());
}
