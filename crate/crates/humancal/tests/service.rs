use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use humancal::config::{ServiceConfig, TaskConfig};
use humancal::dataset::{read_records, Schema};
use humancal::service::{export_records, read_log, router, AppState};
use humancal_core::protocol::EventKind;
use humancal_core::transform::TransformParams;
use serde_json::{json, Value};
use tower::ServiceExt;

const QUESTIONS: &str = "question,advice_prob,label,content\n\
                         a,0.8,1,alpha\nb,0.3,0,beta\nc,0.65,1,gamma\nd,0.9,0,delta\n";

fn setup(dir: &Path) -> ServiceConfig {
    std::fs::write(dir.join("questions.csv"), QUESTIONS).unwrap();
    let static_dir = dir.join("static");
    std::fs::create_dir_all(&static_dir).unwrap();
    std::fs::write(static_dir.join("index.html"), "<p>hello</p>").unwrap();
    ServiceConfig {
        data_dir: dir.join("data"),
        static_dir,
        arms: vec![TransformParams::BASELINE, TransformParams::sigmoid_like(1.6, 0.0).unwrap()],
        tasks: vec![TaskConfig { id: "t".into(), questions: dir.join("questions.csv"), manipulation_answer: "yes".into() }],
        ..ServiceConfig::default()
    }
}

fn app(cfg: &ServiceConfig) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(cfg, &[]).unwrap());
    (state.clone(), router(state, &cfg.static_dir))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn ok(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let (status, bytes) = call(app, method, uri, body).await;
    assert_eq!(status, StatusCode::OK, "{method} {uri}: {}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

fn demographics() -> Value {
    json!({"age": 33.0, "sex": 1, "programming_experience": 0, "ses": 5.0, "ai_presence": 0.25, "education": 3.0, "ai_perception": 0.0})
}

async fn create(app: &Router, pid: &str) -> String {
    let v = ok(app, "POST", "/sessions", Some(json!({"participant_id": pid, "task_id": "t", "demographics": demographics()}))).await;
    assert_eq!(v["stage"]["stage"], "instructions");
    v["session_id"].as_str().unwrap().to_string()
}

/// Drives a session through every stage and returns the bonus view.
async fn complete(app: &Router, id: &str, k: f64) -> Value {
    ok(app, "POST", &format!("/sessions/{id}/instructions"), None).await;
    let m = ok(app, "POST", &format!("/sessions/{id}/manipulation-check"), Some(json!({"answer": "yes"}))).await;
    assert_eq!(m["passed"], true);
    let mut v = ok(app, "POST", &format!("/sessions/{id}/survey"), Some(json!({"stage": "pre", "answers": {"ai_perception": 0.5}}))).await;
    let mut n = 0;
    while v["stage"]["stage"] == "response1" {
        let q = v["question"]["id"].as_str().unwrap().to_string();
        assert_eq!(v["question"]["index"], n);
        assert_eq!(v["question"]["total"], 4);
        let r1 = ((n as f64 + 1.0) * k) % 1.0 - 0.5;
        let a = ok(app, "POST", &format!("/sessions/{id}/questions/{q}/response1"), Some(json!({"value": r1}))).await;
        assert_eq!(a["question_id"], q.as_str());
        let p = a["presented_value"].as_f64().unwrap();
        assert!(p > -1.0 && p < 1.0);
        v = ok(app, "POST", &format!("/sessions/{id}/questions/{q}/response2"), Some(json!({"value": -r1 * 0.5}))).await;
        n += 1;
    }
    assert_eq!(n, 4);
    assert_eq!(v["stage"]["stage"], "post_survey");
    ok(app, "POST", &format!("/sessions/{id}/survey"), Some(json!({"stage": "post", "answers": {}}))).await;
    ok(app, "POST", &format!("/sessions/{id}/finalize"), None).await
}

fn log_file(cfg: &ServiceConfig, id: &str) -> PathBuf {
    cfg.data_dir.join("sessions").join(format!("{id}.jsonl"))
}

#[tokio::test]
async fn full_session_flow_and_log_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (state, app) = app(&cfg);
    let id = create(&app, "p1").await;
    let bonus = complete(&app, &id, 0.37).await;
    let b = bonus["bonus"].as_f64().unwrap();
    assert!(b == 0.0 || b >= 0.3 * 0.3 - 1e-12, "{bonus}");
    let next = ok(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(next["stage"]["stage"], "complete");

    let events = read_log(&log_file(&cfg, &id)).unwrap();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64);
    }
    let kinds: Vec<&str> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Response1 { .. } => Some("r1"),
            EventKind::AdviceServed { .. } => Some("advice"),
            EventKind::Response2 { .. } => Some("r2"),
            _ => None,
        })
        .collect();
    assert_eq!(kinds, ["r1", "advice", "r2"].repeat(4));

    let records = export_records(&state, Some("t")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.demographics.ai_perception == 0.5));
    let (status, csv) = call(&app, "GET", "/export?task=t", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(read_records(csv.as_slice(), &Schema::canonical()).unwrap(), records);
}

#[tokio::test]
async fn failed_manipulation_check_returns_to_instructions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (_, app) = app(&cfg);
    let id = create(&app, "p").await;
    ok(&app, "POST", &format!("/sessions/{id}/instructions"), None).await;
    let m = ok(&app, "POST", &format!("/sessions/{id}/manipulation-check"), Some(json!({"answer": "no"}))).await;
    assert_eq!(m["passed"], false);
    assert_eq!(m["next"]["stage"]["stage"], "instructions");
}

#[tokio::test]
async fn restart_replays_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (state, app) = app(&cfg);
    let done = create(&app, "p1").await;
    complete(&app, &done, 0.61).await;
    let partial = create(&app, "p2").await;
    ok(&app, "POST", &format!("/sessions/{partial}/instructions"), None).await;
    let before = ok(&app, "GET", &format!("/sessions/{partial}/next"), None).await;
    let exported = export_records(&state, None).unwrap();
    drop((state, app));

    let (state, app) = self::app(&cfg);
    assert_eq!(export_records(&state, None).unwrap(), exported);
    assert_eq!(ok(&app, "GET", &format!("/sessions/{partial}/next"), None).await, before);
    let m = ok(&app, "POST", &format!("/sessions/{partial}/manipulation-check"), Some(json!({"answer": "yes"}))).await;
    assert_eq!(m["passed"], true);
}

#[tokio::test]
async fn concurrent_sessions_keep_their_own_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (state, app) = app(&cfg);
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = create(&app, &format!("p{i}")).await;
            complete(&app, &id, 0.1 + 0.07 * f64::from(i)).await;
            id
        }));
    }
    let mut ids = Vec::new();
    for h in handles {
        ids.push(h.await.unwrap());
    }
    for id in &ids {
        let seqs: Vec<u64> = read_log(&log_file(&cfg, id)).unwrap().iter().map(|e| e.seq).collect();
        assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
    }
    let records = export_records(&state, None).unwrap();
    assert_eq!(records.len(), 32);
    let pids: Vec<&str> = records.iter().map(|r| r.participant_id.as_str()).collect();
    assert!(pids.windows(2).all(|w| w[0] <= w[1]));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (_, app) = app(&cfg);
    assert_eq!(call(&app, "GET", "/sessions/nope/next", None).await.0, StatusCode::NOT_FOUND);
    let body = json!({"participant_id": "p", "task_id": "zz", "demographics": demographics()});
    assert_eq!(call(&app, "POST", "/sessions", Some(body)).await.0, StatusCode::NOT_FOUND);
    let id = create(&app, "p").await;
    let (status, bytes) = call(&app, "POST", &format!("/sessions/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(serde_json::from_slice::<Value>(&bytes).unwrap()["error"].is_string());
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/questions/a/response1"), Some(json!({"value": 0.2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(call(&app, "GET", "/export?task=zz", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_route_serves_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (_, app) = app(&cfg);
    let (status, bytes) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<p>hello</p>");
    assert_eq!(call(&app, "GET", "/", None).await.1, b"<p>hello</p>");
}
