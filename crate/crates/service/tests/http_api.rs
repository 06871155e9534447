use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use subsample_core::adaptive::{adaptive_label, AdaptiveConfig, StopStatus};
use subsample_core::legend::Legend;
use subsample_core::raster::{extract_units, generate_patch_mosaic};
use subsample_service::{router, SessionStore, StateView};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn raw_post(app: &Router, uri: &str, body: &'static str) -> StatusCode {
    let req = Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

fn app() -> Router {
    router(Arc::new(SessionStore::new()))
}

fn binary_session(alpha: f64, seed: u64) -> Value {
    json!({
        "legend": {"type": "binary", "classes": [1], "threshold": 0.5},
        "alpha": alpha,
        "n_init": 9,
        "n_max": 144,
        "unit": {"side": 180},
        "seed": seed
    })
}

async fn label(app: &Router, id: &str, point_index: u64, class: u64) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!({"point_index": point_index, "class": class})),
    )
    .await
}

#[tokio::test]
async fn create_returns_initial_batch() {
    let app = app();
    let (status, body) = call(&app, Method::POST, "/sessions", Some(binary_session(0.001, 3))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();
    assert!(!id.is_empty());
    let proposed = body["proposed_points"].as_array().unwrap();
    assert_eq!(proposed.len(), 9);
    for (i, p) in proposed.iter().enumerate() {
        assert_eq!(p["index"], i);
        for axis in ["x", "y"] {
            let v = p[axis].as_f64().unwrap();
            assert!((0.0..1.0).contains(&v));
        }
    }
    assert_eq!(body["status"], "active");
    assert_eq!(body["n_used"], 0);
    assert_eq!(body["tallies"], json!([0, 0]));
    assert_eq!(body["proportions"], Value::Null);
    assert_eq!(body["ci"]["lower"], 0.0);
    assert_eq!(body["ci"]["upper"], 1.0);
    assert!(body["final_label"].is_null());
}

#[tokio::test]
async fn nine_present_labels_finish_the_session() {
    let app = app();
    let (_, body) = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, 3))).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let mut last = Value::Null;
    for i in 0..9 {
        let (status, body) = label(&app, &id, i, 1).await;
        assert_eq!(status, StatusCode::OK);
        last = body;
    }
    assert_eq!(last["status"], "completed");
    assert_eq!(last["n_used"], 9);
    assert_eq!(last["final_label"]["value"]["presence"], true);
    assert!((last["ci"]["lower"].as_f64().unwrap() - 0.7169).abs() < 5e-5);
    assert_eq!(last["proposed_points"], json!([]));

    let (status, again) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, last);
    let (status, _) = label(&app, &id, 0, 1).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, third) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(third, last);

    let (status, trace) = call(&app, Method::GET, &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    let entries = trace["trace"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["n"], 9);
    assert_eq!(entries[0]["decision"]["status"], "StopConfident");
}

#[tokio::test]
async fn split_answers_propose_a_tenth_point() {
    let app = app();
    let (_, body) = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, 4))).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let mut last = Value::Null;
    for i in 0..9 {
        last = label(&app, &id, i, u64::from(i < 5)).await.1;
    }
    assert_eq!(last["status"], "active");
    assert_eq!(last["decision"]["status"], "Continue");
    let proposed = last["proposed_points"].as_array().unwrap();
    assert_eq!(proposed.len(), 1);
    assert_eq!(proposed[0]["index"], 9);
    let ci = (last["ci"]["lower"].as_f64().unwrap(), last["ci"]["upper"].as_f64().unwrap());
    assert!(ci.0 < 0.5 && ci.1 > 0.5);
    assert_eq!(last["proportions"][1].as_f64().unwrap(), 5.0 / 9.0);
}

#[tokio::test]
async fn error_statuses() {
    let store = Arc::new(SessionStore::new());
    let app = router(store.clone());
    let (status, body) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    assert_eq!(label(&app, "nope", 0, 0).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        call(&app, Method::GET, "/sessions/nope/trace", None).await.0,
        StatusCode::NOT_FOUND
    );

    let mut bad_alpha = binary_session(1.5, 1);
    assert_eq!(
        call(&app, Method::POST, "/sessions", Some(bad_alpha.clone())).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    bad_alpha["alpha"] = json!(0.1);
    bad_alpha["surprise"] = json!(true);
    assert_eq!(
        call(&app, Method::POST, "/sessions", Some(bad_alpha)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(raw_post(&app, "/sessions", "{not json").await, StatusCode::BAD_REQUEST);
    let no_unit = json!({"legend": {"type": "majority"}, "class_count": 3});
    assert_eq!(
        call(&app, Method::POST, "/sessions", Some(no_unit)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert!(store.is_empty());

    let (_, body) = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, 1))).await;
    let id = body["session_id"].as_str().unwrap().to_string();
    assert_eq!(label(&app, &id, 0, 1).await.0, StatusCode::OK);
    let before = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.1;
    assert_eq!(label(&app, &id, 0, 0).await.0, StatusCode::CONFLICT);
    assert_eq!(label(&app, &id, 42, 0).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(label(&app, &id, 1, 7).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        raw_post(&app, &format!("/sessions/{id}/labels"), r#"{"point_index": 1}"#).await,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let after = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.1;
    assert_eq!(before, after);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, 9))).await.1;
    let b = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, 9))).await.1;
    let (ida, idb) = (a["session_id"].as_str().unwrap(), b["session_id"].as_str().unwrap());
    assert_ne!(ida, idb);
    assert_eq!(a["proposed_points"], b["proposed_points"]);
    for i in 0..9 {
        label(&app, ida, i, 1).await;
    }
    let b_now = call(&app, Method::GET, &format!("/sessions/{idb}"), None).await.1;
    assert_eq!(b_now, b);
}

#[tokio::test]
async fn concurrent_sessions_do_not_interfere() {
    let store = Arc::new(SessionStore::new());
    let app = router(store.clone());
    let mut handles = Vec::new();
    for s in 0..16u64 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let body = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, s))).await.1;
            let id = body["session_id"].as_str().unwrap().to_string();
            for i in 0..9 {
                label(&app, &id, i, s % 2).await;
            }
            call(&app, Method::GET, &format!("/sessions/{id}"), None).await.1
        }));
    }
    for (s, h) in handles.into_iter().enumerate() {
        let state = h.await.unwrap();
        assert_eq!(state["status"], "completed");
        assert_eq!(state["final_label"]["value"]["presence"], s % 2 == 1);
    }
    assert_eq!(store.len(), 16);
}

#[tokio::test]
async fn majority_payload_lists_one_interval_per_class() {
    let app = app();
    let req = json!({
        "legend": {"type": "majority"},
        "alpha": 0.05,
        "class_count": 4,
        "image_url": "https://example.org/unit.png",
        "seed": 1
    });
    let (status, body) = call(&app, Method::POST, "/sessions", Some(req)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["unit"]["side"], 180);
    assert_eq!(body["image_url"], "https://example.org/unit.png");
    let ci = body["ci"].as_array().unwrap();
    assert_eq!(ci.len(), 4);
    assert!(ci.iter().all(|c| c["lower"] == 0.0 && c["upper"] == 1.0));
}

/// A scripted interpreter who always answers with the raster class under
/// the proposed point must reproduce the simulated adaptive run exactly.
#[tokio::test]
async fn perfect_operator_replays_simulation() {
    let raster = generate_patch_mosaic(600, 600, 3, 3.0, &[1.0, 1.0, 1.0], 21).unwrap();
    let units = extract_units(&raster, 60, 0, 0).unwrap();
    assert_eq!(units.len(), 100);
    let app = app();
    let legends = [Legend::binary(vec![1], 0.5), Legend::binary(vec![2], 0.1), Legend::Majority];
    for (i, unit) in units.iter().enumerate() {
        let legend = legends[i % legends.len()].clone();
        let alpha = if i % 2 == 0 { 0.001 } else { 0.1 };
        let seed = 1000 + i as u64;
        let expected = adaptive_label(unit, &AdaptiveConfig::new(alpha, legend.clone()), seed).unwrap();

        let req = json!({
            "legend": legend,
            "alpha": alpha,
            "class_count": 3,
            "unit": {"side": 60},
            "seed": seed
        });
        let (status, mut state) = call(&app, Method::POST, "/sessions", Some(req)).await;
        assert_eq!(status, StatusCode::CREATED);
        let id = state["session_id"].as_str().unwrap().to_string();
        while state["status"] == "active" {
            let next = state["proposed_points"][0].clone();
            let (x, y) = (next["x"].as_f64().unwrap(), next["y"].as_f64().unwrap());
            let (row, col) = ((y * 60.0) as usize, (x * 60.0) as usize);
            let class = unit.class_at(row, col) as u64;
            let (status, body) = label(&app, &id, next["index"].as_u64().unwrap(), class).await;
            assert_eq!(status, StatusCode::OK);
            state = body;
        }
        let view: StateView = serde_json::from_value(state).unwrap();
        assert_eq!(view.n_used, expected.n_used, "unit {i}");
        assert_eq!(view.final_label, Some(expected.label), "unit {i}");
        let status = view.decision.as_ref().unwrap().status;
        assert_eq!(status, expected.status, "unit {i}");
        assert_eq!(
            view.status == subsample_service::SessionStatus::Capped,
            expected.status == StopStatus::StopCapped
        );
        let trace = call(&app, Method::GET, &format!("/sessions/{id}/trace"), None).await.1;
        let trace: Vec<subsample_core::adaptive::TraceEntry> = serde_json::from_value(trace["trace"].clone()).unwrap();
        assert_eq!(trace, expected.trace, "unit {i}");
    }
}

#[tokio::test]
async fn journal_rebuilds_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let store = Arc::new(SessionStore::with_journal(&path).unwrap());
    let app = router(store.clone());
    let mut ids = Vec::new();
    for s in 0..3u64 {
        let body = call(&app, Method::POST, "/sessions", Some(binary_session(0.1, s))).await.1;
        let id = body["session_id"].as_str().unwrap().to_string();
        for i in 0..(3 + 3 * s) {
            label(&app, &id, i, 1).await;
        }
        // A rejected call must not reach the journal.
        assert_eq!(label(&app, &id, 0, 1).await.0, StatusCode::CONFLICT);
        ids.push(id);
    }
    // Sessions without a seed get one assigned and journaled.
    let mut unseeded = binary_session(0.1, 0);
    unseeded.as_object_mut().unwrap().remove("seed");
    let body = call(&app, Method::POST, "/sessions", Some(unseeded)).await.1;
    ids.push(body["session_id"].as_str().unwrap().to_string());

    let before: Vec<StateView> = ids.iter().map(|id| store.state(id).unwrap()).collect();
    drop(app);
    drop(store);

    let replayed = SessionStore::with_journal(&path).unwrap();
    let after: Vec<StateView> = ids.iter().map(|id| replayed.state(id).unwrap()).collect();
    assert_eq!(before, after);
    // The reopened journal keeps appending.
    replayed.submit_label(&ids[0], 3, 1).unwrap();
    let again = SessionStore::replay(&path).unwrap();
    assert_eq!(again.state(&ids[0]).unwrap().n_used, 4);
}

#[tokio::test]
async fn corrupt_journal_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"event\":\"labeled\",\"session_id\":\"x\",\"point_index\":0,\"class\":1}\n",
    )
    .unwrap();
    let err = SessionStore::replay(&path).unwrap_err().to_string();
    assert!(err.contains("line 1") && err.contains("bad.jsonl"), "{err}");
    std::fs::write(&path, "\n\nnot json\n").unwrap();
    let err = SessionStore::replay(&path).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}
