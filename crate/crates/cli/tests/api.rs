#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use optimas_cli::server::{bind, router, ApiState, ServeError};
use optimas_core::gateway::network_attempts;
use serde_json::Value;
use tower::ServiceExt;

const ALL: &str = "{ pc: true, ia: true, roofline: true }";

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, "").await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn api(root: &Path, base: &Path) -> Router {
    router(ApiState::new(root, base))
}

async fn wait_terminal(app: &Router, id: &str) -> Value {
    for _ in 0..300 {
        let (s, v) = get_json(app, &format!("/runs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if !matches!(v["status"].as_str(), Some("queued" | "running")) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run {id} did not finish");
}

#[tokio::test]
async fn empty_root_lists_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let app = api(tmp.path(), tmp.path());
    assert_eq!(get_json(&app, "/runs").await, (StatusCode::OK, serde_json::json!([])));
    assert_eq!(get_json(&app, "/corpus").await, (StatusCode::OK, serde_json::json!([])));
    let (s, _) = get_json(&app, "/runs/not-a-uuid").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json(&app, &format!("/runs/{}", uuid::Uuid::new_v4())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn submitted_run_reaches_terminal_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = common::write_app(tmp.path(), ALL, &common::app_reply("0.005"));
    let root = tmp.path().join("served");
    let app = api(&root, tmp.path());
    let before = network_attempts();

    let (s, body) = call(&app, "POST", "/runs", &std::fs::read_to_string(&cfg_path).unwrap()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let queued: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(queued["status"], "queued");
    let id = queued["run_uuid"].as_str().unwrap().to_string();

    let m = wait_terminal(&app, &id).await;
    assert_eq!(m["status"], "improved", "{m}");
    assert!(m["digests"]["prompt_1.txt"].is_string());
    assert_eq!(network_attempts(), before);

    let (_, runs) = get_json(&app, "/runs").await;
    assert_eq!(runs.as_array().unwrap().len(), 1);
    assert_eq!(runs[0]["run_uuid"], id.as_str());

    let (s, ear) = get_json(&app, &format!("/runs/{id}/ear")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ear["evidence_coverage"], 1.0);
    assert_eq!(ear["directional_consistency"], "not-measured");

    let (s, diff) = get_json(&app, &format!("/runs/{id}/diff")).await;
    assert_eq!(s, StatusCode::OK);
    let hunks = diff["hunks"].as_array().unwrap();
    assert_eq!(hunks.len(), 1);
    assert_eq!(hunks[0]["evidence_ids"], serde_json::json!(["PC-01"]));
    assert!(diff["id_map"]["PC-01"].as_str().unwrap().contains("stall_wait"));
    assert!(diff["unified"].as_str().unwrap().contains("+sleep 0.005"));

    let (s, prompt) = call(&app, "GET", &format!("/runs/{id}/artifacts/prompt_1.txt"), "").await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(prompt).unwrap().contains("PC-01"));
    let (s, _) = call(&app, "GET", &format!("/runs/{id}/artifacts/diagnostics/bundle.json"), "").await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "GET", &format!("/runs/{id}/artifacts/../../config.yml"), "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, corpus) = get_json(&app, "/corpus").await;
    assert_eq!(corpus.as_array().unwrap().len(), 1);
    assert_eq!(corpus[0]["App"], "saxpy-app");

    // post profile: the dominant stall dropped
    let post = tmp.path().join("post");
    let run_dir = optimas_core::pipeline::find_run(&root, &id).unwrap();
    let mut b = optimas_core::ingest::DiagnosticBundle::read_dir(&run_dir.join("diagnostics")).unwrap();
    b.stalls.iter_mut().filter(|s| s.stall_type == "stall_wait").for_each(|s| s.cycles /= 2);
    b.write_dir(&post).unwrap();
    for _ in 0..2 {
        let (s, r) = call(&app, "POST", &format!("/runs/{id}/reprofile"), r#"{"post_dir": "post"}"#).await;
        assert_eq!(s, StatusCode::OK);
        let r: Value = serde_json::from_slice(&r).unwrap();
        assert_eq!(r["directional_consistency"], 1.0);
    }
    let (_, ear) = get_json(&app, &format!("/runs/{id}/ear")).await;
    assert_eq!(ear["directional_consistency"], 1.0);

    let (s, err) = call(&app, "POST", &format!("/runs/{id}/reprofile"), "").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = serde_json::from_slice(&err).unwrap();
    assert_eq!(err["stage"], "ingest");

    let (s, events) = call(&app, "GET", &format!("/runs/{id}/events"), "").await;
    assert_eq!(s, StatusCode::OK);
    let events = String::from_utf8(events).unwrap();
    assert!(events.contains("event: status") && events.contains("\"improved\""), "{events}");
}

#[tokio::test]
async fn invalid_config_is_rejected_with_its_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = common::write_app(tmp.path(), ALL, "");
    let text = std::fs::read_to_string(cfg_path).unwrap() + "thresholds:\n  alpha: 1.5\n";
    let app = api(tmp.path(), tmp.path());
    let (s, body) = call(&app, "POST", "/runs", &text).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["key"], "thresholds.alpha");
    assert_eq!(get_json(&app, "/runs").await.1, serde_json::json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn failure_before_run_dir_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = common::write_app(tmp.path(), ALL, "");
    std::fs::remove_file(tmp.path().join("profile/kernels.csv")).unwrap();
    let app = api(&tmp.path().join("served"), tmp.path());
    let (_, body) = call(&app, "POST", "/runs", &std::fs::read_to_string(cfg_path).unwrap()).await;
    let id = serde_json::from_slice::<Value>(&body).unwrap()["run_uuid"].as_str().unwrap().to_string();
    let v = wait_terminal(&app, &id).await;
    assert_eq!(v["status"], "failed");
    assert!(v["error"].as_str().unwrap().starts_with("ingest stage:"));
    assert_eq!(get_json(&app, "/runs").await.1[0]["status"], "failed");
}

#[tokio::test]
async fn occupied_port_is_port_in_use() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    match bind(addr).await {
        Err(ServeError::PortInUse(a)) => assert_eq!(a, addr),
        other => panic!("expected PortInUse, got {other:?}"),
    }
}
