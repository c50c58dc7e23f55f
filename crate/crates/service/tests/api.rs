use axum::body::Body;
use axum::http::{Request, StatusCode};
use combo_ewoc_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const CREATE: &str = "/trials";

fn create_body(extra: Value) -> Value {
    let mut body = json!({
        "window": { "x_min": 100.0, "x_max": 500.0, "y_min": 10.0, "y_max": 50.0 },
        "design": { "n_max": 8, "stop_n1": 4 },
        "sampler": { "n_iterations": 1500, "n_burnin": 500, "thin": 1 },
        "seed": 17
    });
    if let (Some(b), Some(e)) = (body.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    body
}

async fn send(app: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(app.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &AppState, extra: Value) -> Value {
    let (status, v) = send(app, "POST", CREATE, Some(create_body(extra))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

async fn post_cohort(app: &AppState, id: &str, outcomes: Value, rev: u64) -> (StatusCode, Value) {
    send(
        app,
        "POST",
        &format!("/trials/{id}/cohorts"),
        Some(json!({ "outcomes": outcomes, "expected_revision": rev })),
    )
    .await
}

fn id_of(v: &Value) -> String {
    v["trial_id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn create_returns_minimum_raw_doses() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let v = create(&app, json!({})).await;
    assert_eq!(v["revision"], 1);
    assert_eq!(v["status"], "enrolling");
    let rec = &v["recommendation"];
    assert_eq!(rec["cohort"], 1);
    assert_eq!(rec["alpha"], 0.25);
    for p in rec["patients"].as_array().unwrap() {
        assert_eq!(p["dose"]["raw"], json!({ "x": 100.0, "y": 10.0 }));
        assert_eq!(p["dose"]["standardized"], json!({ "x": 0.0, "y": 0.0 }));
    }
}

#[tokio::test]
async fn create_is_idempotent_on_key() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let first = create(&app, json!({ "idempotency_key": "abc" })).await;
    let (status, again) = send(&app, "POST", CREATE, Some(create_body(json!({ "idempotency_key": "abc" })))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);
    assert_eq!(app.trial_count(), 1);
}

#[tokio::test]
async fn invalid_create_reports_field() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let (status, v) = send(&app, "POST", CREATE, Some(create_body(json!({ "bogus": 1 })))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "validation");
    let (status, v) = send(
        &app,
        "POST",
        CREATE,
        Some(create_body(json!({ "window": { "x_min": 5.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0 } }))),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
}

#[tokio::test]
async fn cohort_flow_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);

    let (status, v) = send(&app, "GET", &format!("/trials/{id}/mtd-curve"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "invalid_state");

    let (status, v) = post_cohort(&app, &id, json!([0]), 1).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["fields"][0]["path"], "outcomes");
    let (status, _) = post_cohort(&app, &id, json!([0, 2]), 1).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = post_cohort(&app, &id, json!([0, 0]), 1).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 2);
    assert_eq!(v["outcome"], "next_cohort");
    let rec = &v["recommendation"];
    assert_eq!(rec["cohort"], 2);
    assert_eq!(rec["alpha"], 0.25);
    let patients = rec["patients"].as_array().unwrap();
    assert_eq!(patients[0]["patient"], 3);
    assert_eq!(patients[0]["updated_agent"], "A");
    assert_eq!(patients[1]["updated_agent"], "B");
    for p in patients {
        let s = &p["dose"]["standardized"];
        assert!(s["x"].as_f64().unwrap() <= 0.2 + 1e-12 && s["y"].as_f64().unwrap() <= 0.2 + 1e-12);
    }

    let (status, v) = post_cohort(&app, &id, json!([0, 0]), 1).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "revision_conflict");
    assert_eq!(v["current_revision"], 2);

    let (status, _) = send(&app, "GET", "/trials/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cohort_retry_with_same_key_is_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);
    let body = json!({ "outcomes": [0, 1], "expected_revision": 1, "idempotency_key": "c1" });
    let uri = format!("/trials/{id}/cohorts");
    let (s1, a) = send(&app, "POST", &uri, Some(body.clone())).await;
    let (s2, b) = send(&app, "POST", &uri, Some(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    let (_, view) = send(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(view["transcript"].as_array().unwrap().len(), 2);
    assert_eq!(view["revision"], 2);
}

#[tokio::test]
async fn curve_bands_preview_and_safety() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);
    let (_, rec) = post_cohort(&app, &id, json!([0, 0]), 1).await;

    let uri = format!("/trials/{id}/mtd-curve?n_points=11&alpha=0.25");
    let (status, a) = send(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let (_, b) = send(&app, "GET", &uri, None).await;
    assert_eq!(a, b);

    let points = a["points"].as_array().unwrap();
    assert_eq!(points.len(), 11);
    for p in points {
        let bands = &p["bands"];
        let (q25, q50, q75) =
            (bands["q25"].as_f64().unwrap(), bands["q50"].as_f64().unwrap(), bands["q75"].as_f64().unwrap());
        assert!(q25 <= q50 && q50 <= q75, "{bands}");
        let raw_y = p["raw"]["y"].as_f64().unwrap();
        assert!((10.0..=50.0).contains(&raw_y));
    }
    // Previewing at the trial's own α reproduces the pending cohort.
    assert_eq!(a["preview"], rec["recommendation"]);

    let (status, _) = send(&app, "GET", &format!("/trials/{id}/mtd-curve?alpha=0.7"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(&app, "GET", &format!("/trials/{id}/mtd-curve?n_points=1"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, s) = send(&app, "GET", &format!("/trials/{id}/safety"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["evaluable_patients"], 2);
    assert_eq!(s["rule_active"], false);
    assert_eq!(s["rule_triggered"], false);
    assert!((s["threshold"].as_f64().unwrap() - 0.38).abs() < 1e-12);
    let p = s["exceedance_probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[tokio::test]
async fn restart_replays_pending_recommendation() {
    let dir = tempfile::tempdir().unwrap();
    let id;
    let before;
    {
        let app = AppState::open(dir.path()).unwrap();
        id = id_of(&create(&app, json!({})).await);
        post_cohort(&app, &id, json!([0, 0]), 1).await;
        post_cohort(&app, &id, json!([1, 0]), 2).await;
        before = send(&app, "GET", &format!("/trials/{id}"), None).await.1;
    }
    let app = AppState::open(dir.path()).unwrap();
    assert_eq!(app.trial_count(), 1);
    let (_, after) = send(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["pending"]["cohort"], 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_posts_admit_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);
    let tasks: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { post_cohort(&app, &id, json!([0, 0]), 1).await.0 })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::OK).count(), 1, "{codes:?}");
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::CONFLICT).count(), 3);
}

#[tokio::test]
async fn trial_completes_at_n_max() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);
    let mut last = Value::Null;
    for rev in 1..=4 {
        let (status, v) = post_cohort(&app, &id, json!([0, 0]), rev).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        last = v;
    }
    assert_eq!(last["outcome"], "completed");
    assert_eq!(last["status"], "completed");
    assert!(last["recommendation"].is_null());
    assert!(last["estimate"]["rho00"].as_f64().is_some());

    let (status, v) = post_cohort(&app, &id, json!([0, 0]), 5).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "invalid_state");
    let (_, view) = send(&app, "GET", &format!("/trials/{id}"), None).await;
    assert!(view["pending"].is_null());
    assert!(view["estimate"].is_object());
    let (status, _) = send(&app, "GET", &format!("/trials/{id}/mtd-curve?alpha=0.3"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn safety_rule_stops_toxic_trial() {
    let dir = tempfile::tempdir().unwrap();
    let app = AppState::open(dir.path()).unwrap();
    let id = id_of(&create(&app, json!({})).await);
    let mut rev = 1;
    let outcome = loop {
        let (status, v) = post_cohort(&app, &id, json!([1, 1]), rev).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        rev += 1;
        if v["outcome"] != "next_cohort" {
            break v;
        }
    };
    assert_eq!(outcome["outcome"], "stopped_for_safety");
    assert_eq!(outcome["status"], "stopped_for_safety");
    let (_, s) = send(&app, "GET", &format!("/trials/{id}/safety"), None).await;
    assert_eq!(s["rule_triggered"], true);
}
