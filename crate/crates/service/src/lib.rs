//! HTTP/JSON API over a loaded model bundle for interactive intervention
//! sessions. The model is immutable after start-up; sessions live in memory
//! and are evicted after a period of inactivity.

mod error;
mod model;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::response::Html;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::ServiceError;
pub use model::{Bundle, ConceptView, Model, PredictionView, Snapshot};
pub use session::{HistoryEntry, Session, SessionStore, DEFAULT_TTL};

type ApiResult<T> = Result<Json<T>, ServiceError>;

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Model>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(bundle: Bundle, ttl: Duration) -> Result<Self, ServiceError> {
        Ok(AppState {
            model: Arc::new(Model::new(bundle)?),
            sessions: Arc::new(SessionStore::new(ttl)),
        })
    }
}

/// All routes. `/ui` serves `ui_dir` when given, otherwise a minimal
/// built-in page.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/samples", get(list_samples))
        .route("/samples/{id}/activations", get(sample_activations))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/intervene", post(intervene))
        .route("/sessions/{id}/reset", post(reset))
        .route("/concepts/{id}/children", get(concept_children))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
        None => api
            .route("/ui", get(builtin_ui))
            .route("/ui/", get(builtin_ui)),
    }
}

/// Bind, start the idle-session sweeper and serve until the process exits.
pub async fn serve(state: AppState, addr: SocketAddr, ui_dir: Option<PathBuf>) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })?;
    let sessions = state.sessions.clone();
    let period = (sessions.ttl() / 4).max(Duration::from_secs(1));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sessions.evict_expired();
            if n > 0 {
                log::info!("evicted {n} idle sessions");
            }
        }
    });
    log::info!("listening on {addr}");
    axum::serve(listener, router(state, ui_dir))
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    bank_hash: String,
    concepts: usize,
    classes: usize,
    samples: usize,
    sessions: usize,
}

async fn healthz(State(s): State<AppState>) -> Json<Health> {
    let b = &s.model.bundle;
    Json(Health {
        status: "ok",
        bank_hash: b.bank.content_hash(),
        concepts: b.bank.len(),
        classes: b.head.num_classes(),
        samples: b.images.len(),
        sessions: s.sessions.len(),
    })
}

#[derive(Serialize)]
struct SampleSummary {
    sample_id: String,
    label: Option<usize>,
    prediction: usize,
    prediction_name: String,
    confidence: f64,
}

async fn list_samples(State(s): State<AppState>) -> ApiResult<Vec<SampleSummary>> {
    let m = &s.model;
    let out = (0..m.bundle.images.len())
        .map(|i| {
            let logits = m.bundle.head.logits_dense(&m.clean_row(i))?;
            let p = m.prediction(&logits);
            Ok(SampleSummary {
                sample_id: m.bundle.images.sample_ids[i].clone(),
                label: m.label(i),
                prediction: p.class_id,
                prediction_name: p.class_name,
                confidence: p.confidence,
            })
        })
        .collect::<Result<_, ServiceError>>()?;
    Ok(Json(out))
}

#[derive(Serialize)]
struct SampleView {
    sample_id: String,
    label: Option<usize>,
    #[serde(flatten)]
    snapshot: Snapshot,
}

async fn sample_activations(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SampleView> {
    let i = s.model.sample_index(&id)?;
    let snapshot = s.model.snapshot(i, &s.model.clean_row(i))?;
    Ok(Json(SampleView {
        sample_id: id,
        label: s.model.label(i),
        snapshot,
    }))
}

#[derive(Deserialize)]
struct CreateSession {
    sample_id: String,
}

#[derive(Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub sample_id: String,
    pub label: Option<usize>,
    pub history: Vec<HistoryEntry>,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

fn session_view(model: &Model, sess: &Session) -> Result<SessionView, ServiceError> {
    Ok(SessionView {
        session_id: sess.id.clone(),
        sample_id: model.bundle.images.sample_ids[sess.sample].clone(),
        label: model.label(sess.sample),
        history: sess.history.clone(),
        snapshot: model.snapshot(sess.sample, &sess.row)?,
    })
}

async fn create_session(State(s): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<SessionView> {
    let sample = s.model.sample_index(&req.sample_id)?;
    let sess = Session {
        id: uuid::Uuid::new_v4().to_string(),
        sample,
        row: s.model.clean_row(sample),
        history: Vec::new(),
    };
    let view = session_view(&s.model, &sess)?;
    s.sessions.insert(sess);
    Ok(Json(view))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let slot = s.sessions.get(&id)?;
    let sess = slot.lock().await;
    Ok(Json(session_view(&s.model, &sess)?))
}

#[derive(Deserialize)]
struct InterveneRequest {
    concept_id: usize,
    delta: f64,
    #[serde(default)]
    propagate: bool,
}

#[derive(Serialize)]
struct InterveneResponse {
    affected_ids: Vec<usize>,
    activations: Vec<ConceptView>,
    logits: Vec<f64>,
    prediction: PredictionView,
    history: Vec<HistoryEntry>,
}

async fn intervene(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<InterveneRequest>,
) -> ApiResult<InterveneResponse> {
    let slot = s.sessions.get(&id)?;
    let mut sess = slot.lock().await;
    let affected_ids = sess.intervene(&s.model, req.concept_id, req.delta, req.propagate)?;
    let snap = s.model.snapshot(sess.sample, &sess.row)?;
    Ok(Json(InterveneResponse {
        affected_ids,
        activations: snap.concepts,
        logits: snap.logits,
        prediction: snap.prediction,
        history: sess.history.clone(),
    }))
}

async fn reset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let slot = s.sessions.get(&id)?;
    let mut sess = slot.lock().await;
    sess.reset(&s.model);
    Ok(Json(session_view(&s.model, &sess)?))
}

#[derive(Serialize)]
struct ChildRef {
    id: usize,
    name: String,
}

#[derive(Serialize)]
struct ChildrenView {
    concept_id: usize,
    name: String,
    eta_text: f64,
    children: Vec<ChildRef>,
}

async fn concept_children(State(s): State<AppState>, Path(id): Path<usize>) -> ApiResult<ChildrenView> {
    let bank = &s.model.bundle.bank;
    let concept = bank
        .get(id)
        .map_err(|_| ServiceError::NotFound(format!("concept {id}")))?;
    let children = s
        .model
        .propagation
        .children(id)?
        .iter()
        .map(|&c| ChildRef {
            id: c,
            name: bank.concepts()[c].name.clone(),
        })
        .collect();
    Ok(Json(ChildrenView {
        concept_id: id,
        name: concept.name.clone(),
        eta_text: s.model.bundle.rule.eta_text(concept.norm()),
        children,
    }))
}

async fn builtin_ui() -> Html<&'static str> {
    Html(include_str!("../ui/index.html"))
}
