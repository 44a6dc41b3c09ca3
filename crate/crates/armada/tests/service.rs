use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use armada::config::ServiceConfig;
use armada::service::{router, Engine};
use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tower::ServiceExt;

fn app(dir: &Path) -> Router {
    app_with(ServiceConfig { data_dir: dir.to_path_buf(), assign_seed: Some(1), ..ServiceConfig::default() })
}

fn app_with(config: ServiceConfig) -> Router {
    router(Arc::new(Engine::open(config).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req =
        Request::builder().method(method).uri(uri).body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn create(app: &Router, id: &str, arms: &[&str], floor: f64) -> (StatusCode, Value) {
    let body = json!({"campaign_id": id, "arms": arms, "floor": floor, "n_draws": 4000, "seed": 9});
    call(app, Method::POST, "/campaigns", Some(body.to_string())).await
}

fn served(visitor: &str, arm: &str, ts: i64, req: &str) -> String {
    json!({"type": "served", "visitor_id": visitor, "arm": arm, "timestamp": ts, "request_id": req}).to_string()
}

fn click(visitor: &str, ts: i64, req: &str) -> String {
    json!({"type": "interaction", "visitor_id": visitor, "kind": "click", "timestamp": ts, "request_id": req})
        .to_string()
}

/// Serves for `n` visitors per arm, with `clicks[arm]` of them clicking.
fn traffic(arms: &[(&str, usize)], n: usize) -> String {
    let mut lines = Vec::new();
    for (arm, clicks) in arms {
        for i in 0..n {
            let v = format!("{arm}-v{i}");
            let r = format!("{arm}-r{i}");
            lines.push(served(&v, arm, 1_000 + i as i64, &r));
            if i < *clicks {
                lines.push(click(&v, 2_000 + i as i64, &r));
            }
        }
    }
    lines.join("\n")
}

fn weight(v: &Value, arm: &str) -> f64 {
    v["weights"][arm].as_f64().unwrap()
}

#[tokio::test]
async fn create_validates_config() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = create(&app, "c1", &["a", "b", "c", "d"], 0.05).await;
    assert_eq!(status, StatusCode::CREATED);
    for arm in ["a", "b", "c", "d"] {
        assert_eq!(weight(&body, arm), 0.25);
    }
    let (status, body) = create(&app, "c2", &["a", "b", "c", "d"], 0.3).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("infeasible")));
    let (status, body) = create(&app, "c3", &["a", "a"], 0.05).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid")));
    let (status, body) = create(&app, "c1", &["a", "b"], 0.05).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
    let (status, body) = call(&app, Method::POST, "/campaigns", Some("{".into())).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid")));
    for key in ["code", "message", "detail"] {
        assert!(body.get(key).is_some());
    }
}

#[tokio::test]
async fn ingestion_counts_and_rejects_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b"], 0.05).await;
    let body: Vec<String> = (0..100).map(|i| served(&format!("v{i}"), "a", i, &format!("r{i}"))).collect();
    let (status, r) = call(&app, Method::POST, "/campaigns/c/events", Some(body.join("\n"))).await;
    assert_eq!((status, r["accepted"].as_u64()), (StatusCode::OK, Some(100)));
    assert_eq!(r["rejected"], json!([]));

    let mixed = [served("v1", "a", 1, "x1"), "not json".into(), served("v2", "zzz", 1, "x2"), served("", "a", 1, "x3")];
    let (_, r) = call(&app, Method::POST, "/campaigns/c/events", Some(mixed.join("\n"))).await;
    assert_eq!(r["accepted"], 1);
    let lines: Vec<u64> = r["rejected"].as_array().unwrap().iter().map(|x| x["line"].as_u64().unwrap()).collect();
    assert_eq!(lines, [2, 3, 4]);

    let (status, r) = call(&app, Method::POST, "/campaigns/nope/events", Some(body[0].clone())).await;
    assert_eq!((status, r["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn zero_event_batch_keeps_allocation_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b", "c"], 0.05).await;
    call(&app, Method::POST, "/campaigns/c/events", Some(traffic(&[("a", 30), ("b", 10), ("c", 5)], 200))).await;
    let (_, first) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(first["unchanged"], false);
    assert_eq!(first["epoch"], 1);
    let (_, before) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;

    let (_, second) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(second["unchanged"], true);
    assert_eq!(second["epoch"], 1);
    let (_, after) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;
    for arm in ["a", "b", "c"] {
        assert_eq!(weight(&before, arm).to_bits(), weight(&after, arm).to_bits());
    }
}

#[tokio::test]
async fn batch_respects_floor_and_counts_visitors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b", "c"], 0.1).await;
    call(&app, Method::POST, "/campaigns/c/events", Some(traffic(&[("a", 80), ("b", 5), ("c", 5)], 200))).await;
    let (_, r) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(r["stats_delta"]["a"], json!({"successes": 80, "failures": 120}));
    let total: f64 = ["a", "b", "c"].iter().map(|a| r["allocation"][a].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for arm in ["b", "c"] {
        assert!(r["allocation"][arm].as_f64().unwrap() >= 0.1 - 1e-12);
    }
    assert!(r["allocation"]["a"].as_f64().unwrap() > 0.5);
}

#[tokio::test]
async fn bots_are_filtered_before_counting() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig { data_dir: dir.path().to_path_buf(), ..ServiceConfig::default() };
    config.bots.prefixes = vec!["bot-".into()];
    let app = app_with(config);
    create(&app, "c", &["a", "b"], 0.05).await;
    let mut lines = vec![served("v1", "a", 1, "r1"), served("bot-1", "a", 2, "r2"), served("bot-2", "b", 3, "r3")];
    lines.push(click("bot-1", 4, "r2"));
    call(&app, Method::POST, "/campaigns/c/events", Some(lines.join("\n"))).await;
    let (_, r) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(r["bot_records_dropped"], 2);
    assert_eq!(r["stats_delta"]["a"], json!({"successes": 0, "failures": 1}));
}

#[tokio::test]
async fn assignments_follow_the_published_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b", "c"], 0.1).await;
    call(&app, Method::POST, "/campaigns/c/events", Some(traffic(&[("a", 40), ("b", 30), ("c", 5)], 200))).await;
    call(&app, Method::POST, "/campaigns/c/batch", None).await;
    let (_, alloc) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;

    let n = 100_000;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for i in 0..n {
        let (_, r) =
            call(&app, Method::POST, "/campaigns/c/assign", Some(json!({"visitor_id": format!("v{i}")}).to_string()))
                .await;
        *counts.entry(r["arm"].as_str().unwrap().to_string()).or_default() += 1;
    }
    let chi2: f64 = ["a", "b", "c"]
        .iter()
        .map(|arm| {
            let expected = weight(&alloc, arm) * n as f64;
            let observed = counts.get(*arm).copied().unwrap_or(0) as f64;
            (observed - expected).powi(2) / expected
        })
        .sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}; counts {counts:?}");
}

#[tokio::test]
async fn blacklist_takes_effect_at_next_batch() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b", "c"], 0.05).await;
    let (status, view) = call(&app, Method::POST, "/campaigns/c/arms/c/blacklist", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["pending_changes"], true);
    let (_, now) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;
    assert!(weight(&now, "c") > 0.0, "published allocation is immutable within an epoch");

    let (_, r) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(r["unchanged"], false);
    let (_, next) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;
    assert_eq!(weight(&next, "c"), 0.0);
    for i in 0..5_000 {
        let (_, r) =
            call(&app, Method::POST, "/campaigns/c/assign", Some(json!({"visitor_id": format!("v{i}")}).to_string()))
                .await;
        assert_ne!(r["arm"], "c");
    }

    call(&app, Method::POST, "/campaigns/c/arms/b/blacklist", None).await;
    let (status, r) = call(&app, Method::POST, "/campaigns/c/arms/a/blacklist", None).await;
    assert_eq!((status, r["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("infeasible")));
    let (status, _) = call(&app, Method::DELETE, "/campaigns/c/arms/b/blacklist", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, r) = call(&app, Method::POST, "/campaigns/c/arms/zz/blacklist", None).await;
    assert_eq!((status, r["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn single_arm_campaign_always_assigns_it() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "solo", &["only"], 0.05).await;
    for i in 0..200 {
        let (_, r) = call(
            &app,
            Method::POST,
            "/campaigns/solo/assign",
            Some(json!({"visitor_id": format!("v{i}")}).to_string()),
        )
        .await;
        assert_eq!(r["arm"], "only");
    }
    let (status, _) =
        call(&app, Method::POST, "/campaigns/solo/assign", Some(json!({"visitor_id": ""}).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn added_arm_starts_uniform_and_history_records_effective_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "c", &["a", "b"], 0.05).await;
    call(&app, Method::POST, "/campaigns/c/events", Some(traffic(&[("a", 20), ("b", 10)], 100))).await;
    call(&app, Method::POST, "/campaigns/c/batch", None).await;

    let (status, _) = call(&app, Method::POST, "/campaigns/c/arms", Some(json!({"arm": "n"}).to_string())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, r) = call(&app, Method::POST, "/campaigns/c/arms", Some(json!({"arm": "n"}).to_string())).await;
    assert_eq!((status, r["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
    let schedule = json!({"default_floor": 0.05, "entries": [{"from_epoch": 3, "floor": 0.1}]});
    let (status, _) = call(&app, Method::PUT, "/campaigns/c/floor-schedule", Some(schedule.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let bad = json!({"default_floor": 0.5, "entries": []});
    let (status, r) = call(&app, Method::PUT, "/campaigns/c/floor-schedule", Some(bad.to_string())).await;
    assert_eq!((status, r["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("infeasible")));

    call(&app, Method::POST, "/campaigns/c/batch", None).await;
    let (_, h) = call(&app, Method::GET, "/campaigns/c/history", None).await;
    let epochs = h["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 2);
    let n = &epochs[1]["posteriors"]["n"];
    assert_eq!((n["alpha"].as_f64(), n["beta"].as_f64(), n["mean"].as_f64()), (Some(1.0), Some(1.0), Some(0.5)));
    assert!(n["ci_low"].as_f64().unwrap() < 0.03 && n["ci_high"].as_f64().unwrap() > 0.97);
    assert!(epochs[1]["allocation"]["n"].as_f64().unwrap() >= 0.05 - 1e-12);
    let admin: Vec<(String, u64)> = h["admin"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["action"].as_str().unwrap().to_string(), a["effective_epoch"].as_u64().unwrap()))
        .collect();
    assert_eq!(admin, [("add_arm".to_string(), 2), ("floor_schedule".to_string(), 2)]);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let app = app(dir.path());
        create(&app, "c", &["a", "b"], 0.05).await;
        call(&app, Method::POST, "/campaigns/c/events", Some(traffic(&[("a", 20), ("b", 10)], 100))).await;
        call(&app, Method::POST, "/campaigns/c/batch", None).await;
        call(&app, Method::POST, "/campaigns/c/arms/b/blacklist", None).await;
        call(&app, Method::GET, "/campaigns/c/allocation", None).await.1
    };
    let app = app(dir.path());
    let (_, after) = call(&app, Method::GET, "/campaigns/c/allocation", None).await;
    assert_eq!(before, after);
    let (_, r) = call(&app, Method::POST, "/campaigns/c/batch", None).await;
    assert_eq!(r["allocation"]["b"], 0.0);
}

#[tokio::test]
async fn token_is_enforced_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        api_token: Some("s3cret".into()),
        ..ServiceConfig::default()
    };
    let app = app_with(config);
    let (status, _) = call(&app, Method::GET, "/campaigns", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req =
        Request::builder().uri("/campaigns").header("authorization", "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    let (status, _) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
}
