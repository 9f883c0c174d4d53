use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hypcbm::activation::activation_matrix;
use hypcbm::bank::ChildRule;
use hypcbm::calibration::ScalingLaw;
use hypcbm::head::{fit, FitParams};
use hypcbm::intervention::{suppress, suppress_with_propagation};
use hypcbm::synth::{generate, SynthData, SynthSpec};
use hypcbm_service::{router, AppState, Bundle, ServiceError};
use serde_json::{json, Value};
use tower::ServiceExt;

fn synth_bundle() -> (SynthData, Bundle) {
    let d = generate(&SynthSpec::default()).unwrap();
    let acts = activation_matrix(&d.train, &d.bank, 1.0, 512).unwrap();
    let labels = d.train.labels.clone().unwrap();
    let head = fit(&acts, &labels, d.train.num_classes(), &FitParams::with_lambda(1e-3)).unwrap();
    let bundle = Bundle {
        bank: d.bank.clone(),
        head,
        images: d.test.clone(),
        eta_img: 1.0,
        rule: ChildRule::Law(ScalingLaw::paper()),
    };
    (d, bundle)
}

fn app(bundle: Bundle) -> (AppState, Router) {
    let state = AppState::new(bundle, Duration::from_secs(1800)).unwrap();
    (state.clone(), router(state, None))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn ids(v: &Value) -> Vec<usize> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect()
}

async fn open_session(app: &Router, sample: &str) -> String {
    let (st, v) = call(app, "POST", "/sessions", Some(json!({ "sample_id": sample }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_listing() {
    let (d, bundle) = synth_bundle();
    let head = bundle.head.clone();
    let (_, app) = app(bundle);
    let (st, h) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["status"], "ok");
    assert_eq!(h["concepts"], 13);

    let (st, list) = call(&app, "GET", "/samples", None).await;
    assert_eq!(st, StatusCode::OK);
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), d.test.len());
    let acts = activation_matrix(&d.test, &d.bank, 1.0, 512).unwrap();
    let pred = head.predict(&acts).unwrap();
    for (i, s) in list.iter().enumerate() {
        assert_eq!(s["sample_id"], d.test.sample_ids[i]);
        assert_eq!(s["prediction"].as_u64().unwrap() as usize, pred.labels[i]);
    }
}

#[tokio::test]
async fn root_intervention_propagates_to_descendants() {
    let (d, bundle) = synth_bundle();
    let (_, app) = app(bundle);
    let sample = &d.test.sample_ids[0];
    let sid = open_session(&app, sample).await;
    let root = d.root();
    let (st, r) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/intervene"),
        Some(json!({ "concept_id": root, "delta": 10.0, "propagate": true })),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{r}");
    let mut want = d.descendants(root);
    want.push(root);
    want.sort_unstable();
    assert_eq!(ids(&r["affected_ids"]), want);
    for c in r["activations"].as_array().unwrap() {
        assert_eq!(c["activation"].as_f64().unwrap(), 0.0);
    }

    let (_, children) = call(&app, "GET", &format!("/concepts/{root}/children"), None).await;
    let got: Vec<usize> = children["children"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_u64().unwrap() as usize)
        .collect();
    assert_eq!(got, d.descendants(root));
}

#[tokio::test]
async fn api_logits_match_direct_intervention() {
    let (d, bundle) = synth_bundle();
    let head = bundle.head.clone();
    let law = ScalingLaw::paper();
    let (_, app) = app(bundle);
    let acts = activation_matrix(&d.test, &d.bank, 1.0, 512).unwrap();
    let i = 7;
    let sid = open_session(&app, &d.test.sample_ids[i]).await;
    let mut row = acts.dense_row(i);
    let active: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
    let steps = [(active[active.len() - 1], 0.05, false), (active[0], 0.3, true), (active[1], 0.1, false)];
    for &(concept, delta, propagate) in &steps {
        row = if propagate {
            suppress_with_propagation(&row, concept, delta, &d.bank, &law).unwrap().0
        } else {
            suppress(&row, concept, delta).unwrap()
        };
        let (st, r) = call(
            &app,
            "POST",
            &format!("/sessions/{sid}/intervene"),
            Some(json!({ "concept_id": concept, "delta": delta, "propagate": propagate })),
        )
        .await;
        assert_eq!(st, StatusCode::OK, "{r}");
        assert_eq!(floats(&r["logits"]), head.logits_dense(&row).unwrap());
    }
    let (_, s) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(s["history"].as_array().unwrap().len(), 3);
    assert_eq!(floats(&s["logits"]), head.logits_dense(&row).unwrap());
}

#[tokio::test]
async fn history_replay_reproduces_working_row() {
    let (d, bundle) = synth_bundle();
    let (state, app) = app(bundle);
    let sid = open_session(&app, &d.test.sample_ids[3]).await;
    for (c, delta, p) in [(0, 0.2, true), (4, 0.05, false), (0, 0.2, false)] {
        call(
            &app,
            "POST",
            &format!("/sessions/{sid}/intervene"),
            Some(json!({ "concept_id": c, "delta": delta, "propagate": p })),
        )
        .await;
    }
    let slot = state.sessions.get(&sid).unwrap();
    let sess = slot.lock().await;
    assert_eq!(sess.history.len(), 3);
    assert_eq!(sess.replay(&state.model).unwrap(), sess.row);
}

#[tokio::test]
async fn reset_restores_clean_row_exactly() {
    let (d, bundle) = synth_bundle();
    let (state, app) = app(bundle);
    let sample = &d.test.sample_ids[11];
    let sid = open_session(&app, sample).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    call(
        &app,
        "POST",
        &format!("/sessions/{sid}/intervene"),
        Some(json!({ "concept_id": 0, "delta": 0.7, "propagate": true })),
    )
    .await;
    let (st, after) = call(&app, "POST", &format!("/sessions/{sid}/reset"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(after, before);
    let slot = state.sessions.get(&sid).unwrap();
    let row = slot.lock().await.row.clone();
    let i = d.test.index_of(sample).unwrap();
    let clean = state.model.clean_row(i);
    assert!(row.iter().zip(&clean).all(|(a, b)| a.to_bits() == b.to_bits()));
    let (st, plain) = call(&app, "GET", &format!("/samples/{sample}/activations"), None).await;
    assert_eq!(st, StatusCode::OK, "{plain}");
    assert_eq!(plain["logits"], after["logits"]);
    assert_eq!(plain["concepts"], after["concepts"]);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let (d, bundle) = synth_bundle();
    let (_, app) = app(bundle);
    let sample = &d.test.sample_ids[0];
    let a = open_session(&app, sample).await;
    let b = open_session(&app, sample).await;
    assert_ne!(a, b);
    let (_, b_before) = call(&app, "GET", &format!("/sessions/{b}"), None).await;
    call(
        &app,
        "POST",
        &format!("/sessions/{a}/intervene"),
        Some(json!({ "concept_id": 0, "delta": 5.0, "propagate": true })),
    )
    .await;
    let (_, b_after) = call(&app, "GET", &format!("/sessions/{b}"), None).await;
    assert_eq!(b_before, b_after);
    let (_, base) = call(&app, "GET", &format!("/samples/{sample}/activations"), None).await;
    assert_eq!(base["logits"], b_after["logits"]);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let (d, bundle) = synth_bundle();
    let (_, app) = app(bundle);
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({ "sample_id": "nope" }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/concepts/999/children", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let sid = open_session(&app, &d.test.sample_ids[0]).await;
    let uri = format!("/sessions/{sid}/intervene");
    let (st, e) = call(&app, "POST", &uri, Some(json!({ "concept_id": 999, "delta": 0.1 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(e["error"].as_str().unwrap().contains("999"));
    let (st, _) = call(&app, "POST", &uri, Some(json!({ "concept_id": 0, "delta": 0.0 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (_, s) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    assert!(s["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn mismatched_bank_hash_refused() {
    let (_, mut bundle) = synth_bundle();
    bundle.head.bank_hash = "0000".into();
    assert!(matches!(
        AppState::new(bundle, Duration::from_secs(1)),
        Err(ServiceError::BundleMismatch { .. })
    ));
}

#[tokio::test(start_paused = true)]
async fn idle_sessions_expire() {
    let (d, bundle) = synth_bundle();
    let state = AppState::new(bundle, Duration::from_secs(60)).unwrap();
    let app = router(state.clone(), None);
    let sid = open_session(&app, &d.test.sample_ids[0]).await;
    tokio::time::advance(Duration::from_secs(50)).await;
    assert!(state.sessions.get(&sid).is_ok());
    tokio::time::advance(Duration::from_secs(50)).await;
    assert_eq!(state.sessions.evict_expired(), 0);
    tokio::time::advance(Duration::from_secs(11)).await;
    assert_eq!(state.sessions.evict_expired(), 1);
    let (st, _) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn ui_is_served() {
    let (_, bundle) = synth_bundle();
    let state = AppState::new(bundle, Duration::from_secs(60)).unwrap();
    let res = router(state.clone(), None)
        .oneshot(Request::get("/ui").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);

    let dir = std::env::temp_dir().join(format!("hypcbm-ui-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<p>custom</p>").unwrap();
    let res = router(state, Some(dir.clone()))
        .oneshot(Request::get("/ui/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<p>custom</p>");
    std::fs::remove_dir_all(dir).unwrap();
}
