mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use schemind_service::{router, SessionStore};

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => request.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn run_and_wait(app: &Router, id: &str, node: &str) -> Value {
    let (status, body) = call(app, "POST", &format!("/sessions/{id}/nodes/{node}/run"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{node}: {body}");
    for _ in 0..2000 {
        let (_, view) = call(app, "GET", &format!("/sessions/{id}/nodes/{node}"), None).await;
        if view["status"]["state"] != "running" {
            assert_eq!(view["status"]["state"], "done", "{node}: {view}");
            return view;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("{node} never finished");
}

async fn create(app: &Router) -> String {
    let manifest = fixture().join("manifest.json");
    let (status, body) = call(app, "POST", "/sessions", Some(json!({"manifest": manifest}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["examples"], 20);
    assert_eq!(body["holdout_ids"].as_array().unwrap().len(), 4);
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn walkthrough_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(SessionStore::new(dir.path(), replay_gateway()).unwrap()));
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));

    let id = create(&app).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/dimensions:c1/run"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "DependencyNotMet");

    let view = run_and_wait(&app, &id, "cluster").await;
    let clusters = view["artifact"]["clustering"]["clusters"].as_array().unwrap().clone();
    assert_eq!(clusters.len(), 3);

    for c in &clusters {
        let c = c["id"].as_str().unwrap();
        let fm = run_and_wait(&app, &id, &format!("feature_matrix:{c}")).await;
        let cells = fm["artifact"]["matrix"]["cells"].as_array().map(Vec::len);
        assert!(cells.is_some(), "{fm}");
        for stage in ["dimensions", "attributes", "overall"] {
            run_and_wait(&app, &id, &format!("{stage}:{c}")).await;
        }
    }

    // Theoretical cluster: apply, contrast, accept the ADD, iterate.
    let theory = clusters
        .iter()
        .find(|c| c["name"] == "Theoretical Contributions")
        .unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();
    let r0 = format!("{theory}-r0");
    let records = run_and_wait(&app, &id, &format!("apply:{r0}")).await;
    let records: Vec<String> = records["artifact"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(records.len(), 6);
    let mut accepted = None;
    for r in &records {
        let report = run_and_wait(&app, &id, &format!("contrast:{r}")).await;
        for s in report["artifact"]["suggestions"].as_array().unwrap() {
            assert_eq!(s["tag"], "ADD");
            accepted = Some((r.clone(), s["id"].as_str().unwrap().to_string()));
        }
    }
    let (record, suggestion) = accepted.expect("one ADD suggestion");
    let review = json!({"target": "review", "record": record, "suggestion": suggestion, "action": "accept"});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(review.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(review)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let view = run_and_wait(&app, &id, &format!("iterate:{r0}")).await;
    assert_eq!(view["artifact"]["schema"]["parent"], r0);
    assert_eq!(view["artifact"]["schema"]["revision"], 1);
    let added = &view["artifact"]["diff"]["added_attributes"];
    assert_eq!(added.as_array().unwrap().len(), 1);
    assert_eq!(added[0]["attribute"]["concise"], "Theoretical Integration");

    let align = run_and_wait(&app, &id, &format!("align:{record}")).await;
    let map = &align["artifact"]["map"];
    assert!(!map["segments"].as_array().unwrap().is_empty());

    // Edits after refinement land on the latest revision.
    let (status, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (cluster, dim) = session["clusters"]
        .as_object()
        .unwrap()
        .iter()
        .find_map(|(c, cs)| {
            cs["revisions"].as_array().unwrap().last().unwrap()["dimensions"]
                .as_array()
                .unwrap()
                .iter()
                .find_map(|d| {
                    d["attributes"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .any(|a| a["concise"] == "Specific Population")
                        .then(|| (c.clone(), d["id"].as_str().unwrap().to_string()))
                })
        })
        .unwrap();
    let edit = json!({
        "target": "schema",
        "cluster": cluster,
        "edit": {"kind": "rename_attribute", "scope": dim, "concise": "Specific Population", "new_concise": "Focal Community"}
    });
    let (status, schema) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(edit.clone())).await;
    assert_eq!(status, StatusCode::OK, "{schema}");
    assert!(schema["dimensions"].to_string().contains("Focal Community"));
    // The same rename again no longer finds its target.
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(edit)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["error"], "ValidationError");
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(SessionStore::new(dir.path(), replay_gateway()).unwrap()));
    let (status, _) = call(&app, "GET", "/sessions/doesnotexist", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/..%2F..%2Fetc", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = create(&app).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/clusters/run"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("cluster"));
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/edits"),
        Some(json!({"target": "nope"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"manifest": "/no/such/manifest.json"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "IngestFailed");
}

#[tokio::test(flavor = "multi_thread")]
async fn edits_against_running_nodes_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let (store, gate) = gated_store(dir.path());
    let store = Arc::new(store);
    let app = router(store.clone());
    let id = create(&app).await;
    run_and_wait(&app, &id, "cluster").await;
    for stage in ["dimensions", "attributes", "overall"] {
        run_and_wait(&app, &id, &format!("{stage}:c1")).await;
    }

    gate.close();
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/nodes/apply:c1-r0/run"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/nodes/apply:c1-r0/run"), None).await;
    assert_eq!(
        (status, body["error"].as_str()),
        (StatusCode::CONFLICT, Some("AlreadyRunning"))
    );
    let edit = json!({"target": "schema", "cluster": "c1", "edit": {"kind": "rename_dimension", "dimension": "d1", "name": "X"}});
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(edit.clone())).await;
    assert_eq!(
        (status, body["error"].as_str()),
        (StatusCode::CONFLICT, Some("Conflict"))
    );
    let rename = json!({"target": "cluster", "edit": {"kind": "rename_cluster", "cluster": "c2", "name": "Y"}});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(rename)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    // Nodes of other clusters are unaffected.
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/nodes/dimensions:c2/run"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    // Reads do not wait for the running jobs.
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);

    gate.open();
    for node in ["apply:c1-r0", "dimensions:c2"] {
        for _ in 0..2000 {
            let (_, view) = call(&app, "GET", &format!("/sessions/{id}/nodes/{node}"), None).await;
            if view["status"]["state"] == "done" {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(edit)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_reports_progress() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::new(dir.path(), replay_gateway()).unwrap());
    let app = router(store.clone());
    let id = create(&app).await;
    let request = Request::get(format!("/sessions/{id}/events"))
        .body(Body::empty())
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    assert!(response.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));
    let mut body = response.into_body();
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/nodes/cluster/run"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let mut seen = String::new();
    while !seen.contains("event: node_completed") {
        let frame = tokio::time::timeout(Duration::from_secs(10), body.frame())
            .await
            .expect("event within 10 s")
            .unwrap()
            .unwrap();
        if let Some(data) = frame.data_ref() {
            seen.push_str(std::str::from_utf8(data).unwrap());
        }
    }
    assert!(seen.contains("event: node_started"));
    assert!(seen.contains(r#""node":"cluster""#));
    assert!(seen.contains(r#""state":"done""#));
}
