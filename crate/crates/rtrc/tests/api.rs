use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rtrc::pipeline::{self, SampleMode, SampleParams};
use rtrc::server::{router, AppState};
use rtrc_core::triage::Band;
use serde_json::{json, Value};
use tower::ServiceExt;

const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/demo/runs/demo");

fn copy_run(to: &Path) -> PathBuf {
    let dst = to.join("demo");
    std::fs::create_dir_all(&dst).unwrap();
    for e in std::fs::read_dir(DEMO).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), dst.join(e.file_name())).unwrap();
    }
    dst
}

/// A demo run copy with a wide-band sample queued.
fn sampled_app(tmp: &Path) -> (Router, PathBuf) {
    let run = copy_run(tmp);
    let params = SampleParams {
        mode: SampleMode::WithinMisalign,
        count: 3,
        band: Band::new(0.0, 1.0).unwrap(),
        seed: 1,
        exclude: vec![],
        tau: None,
    };
    let drawn = pipeline::sample(&run, &params).unwrap();
    assert!(!drawn.cases.is_empty());
    (router(AppState::open(&run).unwrap(), None), run)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

#[tokio::test]
async fn queue_is_sorted_by_priority() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = sampled_app(tmp.path());
    let (status, v) = call(&app, "GET", "/api/queue", None).await;
    assert_eq!(status, StatusCode::OK);
    let items = v.as_array().unwrap();
    assert!(!items.is_empty());
    for w in items.windows(2) {
        let (a, b) = (w[0]["priority"].as_f64().unwrap(), w[1]["priority"].as_f64().unwrap());
        assert!(a > b || (a == b && w[0]["case_id"].as_str() < w[1]["case_id"].as_str()));
    }
    let (_, limited) = call(&app, "GET", "/api/queue?limit=1", None).await;
    assert_eq!(limited.as_array().unwrap().len(), 1);
    let (status, _) = call(&app, "GET", "/api/queue?bogus=1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn adjudication_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, run) = sampled_app(tmp.path());
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let id = q[0]["case_id"].as_str().unwrap().to_string();

    let (status, detail) = call(&app, "GET", &format!("/api/cases/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["case"]["case_id"], id);
    assert!(detail["segment_text"].is_string());
    assert!(detail["adjudication"].is_null());

    let uri = format!("/api/cases/{id}/adjudication");
    let body = json!({"resolved_decision": {"Greeting": 1, "Encouragement": 0}, "note": "edge", "reviewer": "r1"});
    let (status, case) = call(&app, "POST", &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{case}");
    assert_eq!(case["status"], "adjudicated");

    let (status, err) = call(&app, "POST", &uri, Some(json!({"resolved_decision": {"Greeting": 0}, "reviewer": "r2"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "already_resolved");

    let (_, open) = call(&app, "GET", "/api/queue", None).await;
    assert!(open.as_array().unwrap().iter().all(|c| c["case_id"] != id.as_str()));
    let (_, done) = call(&app, "GET", "/api/queue?status=adjudicated", None).await;
    assert_eq!(done.as_array().unwrap().len(), 1);

    let (status, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["adjudication"]["adjudicated"], 1);

    // exactly one record persisted
    let log = std::fs::read_to_string(run.join("adjudications.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[tokio::test]
async fn adjudication_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = sampled_app(tmp.path());
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let uri = format!("/api/cases/{}/adjudication", q[0]["case_id"].as_str().unwrap());

    let cases = [
        json!({"resolved_decision": {"Not A Code": 1}, "reviewer": "r"}),
        json!({"resolved_decision": {"Greeting": 2}, "reviewer": "r"}),
        json!({"resolved_decision": {"Greeting": 1}, "reviewer": ""}),
        json!({"resolved_decision": {"Greeting": 1}, "reviewer": "r", "extra": true}),
        json!({"reviewer": "r"}),
    ];
    for body in cases {
        let (status, v) = call(&app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body} -> {v}");
    }
    let (status, _) = call(&app, "POST", "/api/cases/nope/adjudication", Some(json!({"resolved_decision": {}, "reviewer": "r"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/cases/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn read_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = sampled_app(tmp.path());
    let (status, m) = call(&app, "GET", "/api/manifest", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["run_id"], "demo");
    let (status, d) = call(&app, "GET", "/api/codes/GF/distribution", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(d["code"], "Guiding Feedback");
    let (status, _) = call(&app, "GET", "/api/codes/Nope/distribution", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats["n_pairs"], 39);
}

#[tokio::test]
async fn concurrent_submissions_yield_one_record() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, run) = sampled_app(tmp.path());
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let uri = format!("/api/cases/{}/adjudication", q[0]["case_id"].as_str().unwrap());
    let mut handles = Vec::new();
    for i in 0..8 {
        let (app, uri) = (app.clone(), uri.clone());
        handles.push(tokio::spawn(async move {
            call(&app, "POST", &uri, Some(json!({"resolved_decision": {"Greeting": 1}, "reviewer": format!("r{i}")}))).await.0
        }));
    }
    let mut ok = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::OK => ok += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 1);
    let log = std::fs::read_to_string(run.join("adjudications.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}
