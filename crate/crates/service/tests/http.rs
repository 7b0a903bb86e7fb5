//! The JSON API end to end through the router: status codes, error bodies,
//! and serialization of concurrent submissions to one session.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{fixture, human, oracle};
use supercd_service::{router, SessionState, SessionStore};

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path()).unwrap());
    (dir, router(store))
}

fn submission_json(state: &SessionState, ids: &[String]) -> Value {
    serde_json::to_value(fixture().oracle_submission(state, ids)).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle_over_http() {
    let fx = fixture();
    let (_dir, app) = app();

    let (status, body) = call(&app, "POST", "/sessions", Some(json!(fx.request(human(5))))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["status"], "awaiting_annotation");
    let id = body["session_id"].as_str().unwrap().to_string();
    let pending = body["pending"].as_array().unwrap().len();
    assert!(pending > 0 && pending <= 5);

    let (status, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["session_id"], id.as_str());
    assert_eq!(list[0]["annotated"], 0);

    let (status, result) = call(&app, "GET", &format!("/sessions/{id}/result"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(result["error"], "result_not_ready");

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let state: SessionState = serde_json::from_value(body).unwrap();
    let ids: Vec<String> = state.pending.iter().map(|p| p.instance_id.clone()).collect();

    // partial submit, then the rest
    let (status, body) =
        call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(submission_json(&state, &ids[..1]))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "awaiting_annotation");
    assert_eq!(body["pending"].as_array().unwrap().len(), pending - 1);

    let (status, body) =
        call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(submission_json(&state, &ids[1..]))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "complete");

    let (status, result) = call(&app, "GET", &format!("/sessions/{id}/result"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["selected"].as_array().unwrap().len(), pending);
    assert!(result["test_metrics"]["f1"].as_f64().is_some());

    let (status, trace) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(trace["ordered_queries"].is_array());

    // completed session
    let (status, err) =
        call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(submission_json(&state, &ids[..0]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "invalid_state");
}

#[tokio::test(flavor = "multi_thread")]
async fn oracle_start_returns_complete() {
    let fx = fixture();
    let (_dir, app) = app();
    let (status, body) = call(&app, "POST", "/sessions", Some(json!(fx.request(oracle(5))))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["status"], "complete");
    assert_eq!(body["pending"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_use_the_documented_shape() {
    let fx = fixture();
    let (dir, app) = app();

    let mut req = fx.request(human(5));
    req.corpus = dir.path().join("nowhere.jsonl");
    let (status, err) = call(&app, "POST", "/sessions", Some(json!(req))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["detail"].as_str().unwrap().contains("nowhere.jsonl"));

    let mut bad = human(5);
    bad.common.tau = 0.0;
    let (status, err) = call(&app, "POST", "/sessions", Some(json!(fx.request(bad)))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "invalid_config");
    assert!(err["detail"].as_str().unwrap().contains("common.tau"));

    let (status, err) = call(&app, "POST", "/sessions", Some(json!({"ontology": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "bad_request");

    let (status, err) = call(&app, "GET", "/sessions/doesnotexist", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "session_not_found");
    let (status, _) =
        call(&app, "POST", "/sessions/doesnotexist/annotations", Some(json!({"records": []}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, body) = call(&app, "POST", "/sessions", Some(json!(fx.request(human(5))))).await;
    let id = body["session_id"].as_str().unwrap();
    let first = &body["pending"][0];
    let iid = first["instance_id"].as_str().unwrap();
    let mut decisions = serde_json::Map::new();
    for k in first["mention_keys"].as_array().unwrap() {
        decisions.insert(k.as_str().unwrap().to_string(), json!(true));
    }
    decisions.insert(format!("{iid}:98:99"), json!(false));
    let (status, err) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/annotations"),
        Some(json!({"records": [{"instance_id": iid, "decisions": decisions}]})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "unknown_mention_keys");
    assert!(err["detail"].as_str().unwrap().contains(&format!("{iid}:98:99")));

    decisions.remove(&format!("{iid}:98:99"));
    let sub = json!({"records": [{"instance_id": iid, "decisions": decisions}]});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(sub.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(sub)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "already_annotated");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submitters_lose_and_duplicate_nothing() {
    let fx = fixture();
    let (_dir, app) = app();
    let (_, body) = call(&app, "POST", "/sessions", Some(json!(fx.request(human(10))))).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let (_, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let state: SessionState = serde_json::from_value(body).unwrap();
    let ids: Vec<String> = state.pending.iter().map(|p| p.instance_id.clone()).collect();
    assert_eq!(ids.len(), 10);

    // ten submitters, each labeling a different instance
    let tasks: Vec<_> = ids
        .iter()
        .map(|iid| {
            let (app, uri, sub) =
                (app.clone(), format!("/sessions/{id}/annotations"), submission_json(&state, &[iid.clone()]));
            tokio::spawn(async move { call(&app, "POST", &uri, Some(sub)).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let done: SessionState = serde_json::from_value(body).unwrap();
    assert_eq!(done.status, supercd_service::SessionStatus::Complete);
    let annotated: Vec<&str> = done.records.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(annotated.len(), 10);
    assert_eq!(annotated.iter().collect::<BTreeSet<_>>().len(), 10);
    // records end up in selection order whatever the arrival order
    assert_eq!(annotated, ids.iter().map(String::as_str).collect::<Vec<_>>());

    // ten submitters racing for the same instance: exactly one wins
    let (_, body) = call(&app, "POST", "/sessions", Some(json!(fx.request(human(10))))).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let (_, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let state: SessionState = serde_json::from_value(body).unwrap();
    let sub = submission_json(&state, &[state.pending[0].instance_id.clone()]);
    let tasks: Vec<_> = (0..10)
        .map(|_| {
            let (app, uri, sub) = (app.clone(), format!("/sessions/{id}/annotations"), sub.clone());
            tokio::spawn(async move { call(&app, "POST", &uri, Some(sub)).await.0 })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::OK).count(), 1);
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::CONFLICT).count(), 9);
    let (_, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let after: SessionState = serde_json::from_value(body).unwrap();
    assert_eq!(after.records.len(), 1);
    assert_eq!(after.pending.len(), 9);
}
