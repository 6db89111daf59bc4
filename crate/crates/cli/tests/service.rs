use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use tangram_cli::files;
use tangram_cli::serve::{router, ServeState};
use tangram_core::geometry::{generate_trace, Variant};
use tangram_core::trace::TraceDocument;

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn post(body: String) -> Request<Body> {
    Request::post("/traces").header("content-type", "application/json").body(Body::from(body)).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn health_and_puzzles() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(ServeState::new(dir.path()).unwrap()));
    let (status, body) = call(app.clone(), get("/health")).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (status, body) = call(app, get("/puzzles")).await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert!(!list.is_empty());
    for p in list {
        assert!(p["name"].is_string());
        let rows = p["silhouette"].as_array().unwrap();
        assert_eq!(rows.len(), 28);
        assert!(rows.iter().all(|r| r.as_str().unwrap().len() == 28));
        assert!(rows.iter().any(|r| r.as_str().unwrap().contains('1')));
    }
}

#[tokio::test]
async fn valid_trace_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(ServeState::new(dir.path()).unwrap()));
    let doc = TraceDocument::from_solve_trace(&generate_trace(6, Variant::B, 7).unwrap());
    let (status, body) = call(app, post(doc.to_json())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["frames"], 7);
    let stored = files::trace_files(dir.path()).unwrap();
    assert_eq!(stored.len(), 1);
    assert_eq!(files::read_trace(&stored[0]).unwrap(), doc);
}

#[tokio::test]
async fn out_of_range_trace_is_rejected_with_violations() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(ServeState::new(dir.path()).unwrap()));
    let mut trace = generate_trace(6, Variant::A, 5).unwrap();
    trace.steps[3].poses[1].rot = 24;
    let (status, body) = call(app, post(TraceDocument::from_solve_trace(&trace).to_json())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "validation");
    let violations = body["violations"].as_array().unwrap();
    assert!(violations.iter().any(|v| v["kind"] == "out_of_range" && v["step"] == 3));
    assert!(files::trace_files(dir.path()).unwrap().is_empty());
}

#[tokio::test]
async fn malformed_body_gets_parse_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(ServeState::new(dir.path()).unwrap()));
    let (status, body) = call(app.clone(), post("{\"schema_version\": 1,".into())).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("parse")));
    let wrong_version = r#"{"schema_version":3,"kind":"room","metadata":{"puzzle_name":"r"},"frames":[["0"]]}"#;
    let (status, body) = call(app, post(wrong_version.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("schema_version 3"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_uploads_get_distinct_files() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(ServeState::new(dir.path()).unwrap()));
    let mut tasks = Vec::new();
    for seed in 0..16 {
        let app = app.clone();
        let doc = TraceDocument::from_solve_trace(&generate_trace(seed, Variant::A, 4).unwrap());
        tasks.push(tokio::spawn(async move { call(app, post(doc.to_json())).await.0 }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(files::trace_files(dir.path()).unwrap().len(), 16);
}
