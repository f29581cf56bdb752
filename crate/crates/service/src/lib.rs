//! HTTP front end for constrained generation.
//!
//! Endpoints:
//!
//! - `POST /generate`: compile the request's constraints, sample, respond
//!   with the notes. 400 on schema violations, 422 with a conflict report
//!   when the constraints cannot be met, 429 when the queue is full, 503
//!   before the model has loaded.
//! - `GET /generate/{sessionId}/events`: server-sent events, one `decision`
//!   event per sampling decision in order, then a `done` event carrying the
//!   response body.
//! - `GET /health`, `GET /model/info`.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use smlm::net::{encode_checkpoint, decode_checkpoint, ModelError, ModelParams};
use smlm::sampler::{generate_with, Decision, Granularity, SamplerConfig};
use smlm::score::{compile_constraints, Attribute, CompileError, ConstraintSpec, Excerpt, Note};
use tokio::sync::Semaphore;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Generations that may run at once.
    pub workers: usize,
    /// Requests allowed to wait for a worker before new ones get 429.
    pub queue_bound: usize,
    pub session_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            queue_bound: 16,
            session_ttl: Duration::from_secs(600),
        }
    }
}

pub struct LoadedModel {
    pub params: Arc<ModelParams>,
    /// First 16 hex digits of the checkpoint file's SHA-256.
    pub checkpoint_id: String,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let params = decode_checkpoint(bytes)?;
        Ok(Self {
            params: Arc::new(params),
            checkpoint_id: hex::encode(&Sha256::digest(bytes)[..8]),
        })
    }

    pub fn from_params(params: ModelParams) -> Self {
        let id = hex::encode(&Sha256::digest(encode_checkpoint(&params))[..8]);
        Self {
            params: Arc::new(params),
            checkpoint_id: id,
        }
    }
}

struct Session {
    created: Instant,
    decisions: Vec<Decision>,
    response: String,
}

pub struct AppState {
    config: ServiceConfig,
    model: RwLock<Option<Arc<LoadedModel>>>,
    sessions: Mutex<HashMap<String, Session>>,
    workers: Arc<Semaphore>,
    admitted: AtomicUsize,
}

/// A request's place in the queue; released on drop.
pub struct Admission(Arc<AppState>);

impl Drop for Admission {
    fn drop(&mut self) {
        self.0.admitted.fetch_sub(1, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            model: RwLock::new(None),
            sessions: Mutex::new(HashMap::new()),
            admitted: AtomicUsize::new(0),
        })
    }

    pub fn load(&self, model: LoadedModel) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock").clone()
    }

    /// Reserves a worker or queue place, or `None` when both are full.
    pub fn try_admit(self: &Arc<Self>) -> Option<Admission> {
        let limit = self.config.workers.max(1) + self.config.queue_bound;
        let prev = self.admitted.fetch_add(1, Ordering::SeqCst);
        let admission = Admission(self.clone());
        (prev < limit).then_some(admission)
    }

    fn store(&self, id: String, session: Session) {
        let mut sessions = self.sessions.lock().expect("session lock");
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| s.created.elapsed() < ttl);
        sessions.insert(id, session);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GenerateRequest {
    pub constraints: ConstraintSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_notes: Option<Vec<[u8; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerateResponse {
    pub trace_id: String,
    pub session_id: String,
    /// Notes in slot order.
    pub notes: Vec<[u8; 3]>,
    /// The slot each note occupies.
    pub note_slots: Vec<usize>,
    /// Slots the sampler filled (the rest were fixed by the constraints).
    pub generated_slot_indices: Vec<usize>,
    pub forward_passes: usize,
    pub seed: u64,
    pub temperature: f64,
    pub top_p: f64,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/generate", post(handle_generate))
        .route("/generate/{session}/events", get(stream_progress))
        .route("/health", get(health))
        .route("/model/info", get(model_info))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such route") })
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.model() {
        Some(_) => Json(json!({ "status": "ok" })).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

async fn model_info(State(state): State<Arc<AppState>>) -> Response {
    let Some(model) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model is loading");
    };
    let cfg = model.params.config;
    let sizes: serde_json::Map<String, serde_json::Value> = Attribute::ALL
        .iter()
        .map(|a| (a.name().to_string(), json!(a.domain_size())))
        .collect();
    Json(json!({
        "config": cfg,
        "checkpointId": model.checkpoint_id,
        "slotCount": cfg.slot_count,
        "domainSizes": sizes,
        "parameterCount": cfg.parameter_count(),
    }))
    .into_response()
}

async fn handle_generate(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(model) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model is loading");
    };
    let req: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let slots = model.params.config.slot_count;
    let base = match &req.base_notes {
        None => None,
        Some(triples) => {
            let notes: Result<Vec<Note>, _> = triples.iter().map(|t| Note::new(t[0], t[1], t[2])).collect();
            match notes.and_then(|n| Excerpt::from_notes(&n, slots)) {
                Ok(e) => Some(e),
                Err(e) => return error(StatusCode::BAD_REQUEST, format!("baseNotes: {e}")),
            }
        }
    };
    let scfg = SamplerConfig {
        temperature: req.temperature.or(req.constraints.temperature).unwrap_or(1.0),
        top_p: req.top_p.or(req.constraints.top_p).unwrap_or(0.9),
        seed: req.seed.unwrap_or(0),
        granularity: req.granularity.unwrap_or_default(),
    };
    if let Err(e) = scfg.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    let grid = match compile_constraints(&req.constraints, base.as_ref(), slots) {
        Ok(g) => g,
        Err(CompileError::Invalid(m)) => return error(StatusCode::BAD_REQUEST, m),
        Err(CompileError::Infeasible(c)) => {
            let body = json!({
                "error": "infeasible constraints",
                "message": c.to_string(),
                "conflict": c,
            });
            return (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response();
        }
    };
    let Some(admission) = state.try_admit() else {
        return error(StatusCode::TOO_MANY_REQUESTS, "generation queue is full");
    };
    let permit = state.workers.clone().acquire_owned().await.expect("semaphore open");

    let params = model.params.clone();
    let job_grid = grid.clone();
    let result = tokio::task::spawn_blocking(move || {
        let _hold = (permit, admission);
        generate_with(&job_grid, &params, &scfg, |_| {})
    })
    .await;
    let (excerpt, trace) = match result {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };

    let violations = req.constraints.violations(&excerpt, base.as_ref());
    if !violations.is_empty() || !grid.contains_excerpt(&excerpt) {
        log::error!("generated notes violate the submitted constraints: {violations:?}");
        return error(StatusCode::INTERNAL_SERVER_ERROR, "constraint check failed");
    }

    let canonical = json!({
        "checkpoint": model.checkpoint_id,
        "request": GenerateRequest {
            temperature: Some(scfg.temperature),
            top_p: Some(scfg.top_p),
            seed: Some(scfg.seed),
            granularity: Some(scfg.granularity),
            ..req.clone()
        },
    });
    let trace_id = hex::encode(&Sha256::digest(canonical.to_string().as_bytes())[..8]);
    let mut notes = Vec::new();
    let mut note_slots = Vec::new();
    let mut generated = Vec::new();
    for (i, slot) in excerpt.slots().iter().enumerate() {
        if let Some(n) = slot.note() {
            notes.push(n.triple());
            note_slots.push(i);
        }
        if !grid.get(i).is_determined() {
            generated.push(i);
        }
    }
    let response = GenerateResponse {
        session_id: trace_id.clone(),
        trace_id: trace_id.clone(),
        notes,
        note_slots,
        generated_slot_indices: generated,
        forward_passes: trace.forward_passes,
        seed: scfg.seed,
        temperature: scfg.temperature,
        top_p: scfg.top_p,
    };
    let text = serde_json::to_string(&response).expect("response serializes");
    state.store(
        trace_id,
        Session {
            created: Instant::now(),
            decisions: trace.decisions,
            response: text.clone(),
        },
    );
    (StatusCode::OK, [(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn stream_progress(State(state): State<Arc<AppState>>, Path(session): Path<String>) -> Response {
    let events: Vec<Event> = {
        let sessions = state.sessions.lock().expect("session lock");
        let Some(s) = sessions.get(&session).filter(|s| s.created.elapsed() < state.config.session_ttl) else {
            return error(StatusCode::NOT_FOUND, "unknown session");
        };
        let mut events: Vec<Event> = s
            .decisions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut v = serde_json::to_value(d).expect("decision serializes");
                v["index"] = json!(i);
                Event::default().event("decision").id(i.to_string()).data(v.to_string())
            })
            .collect();
        events.push(Event::default().event("done").data(s.response.clone()));
        events
    };
    Sse::new(futures_util::stream::iter(events.into_iter().map(Ok::<_, Infallible>))).into_response()
}

/// Binds `addr`, starts answering immediately (503 until loaded) and loads
/// the checkpoint in the background.
pub async fn run(addr: SocketAddr, checkpoint: PathBuf, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let state = AppState::new(config);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match std::fs::read(&checkpoint)
        .map_err(|e| e.to_string())
        .and_then(|b| LoadedModel::from_bytes(&b).map_err(|e| e.to_string()))
    {
        Ok(m) => {
            log::info!("loaded checkpoint {} ({})", checkpoint.display(), m.checkpoint_id);
            loader.load(m);
        }
        Err(e) => log::error!("cannot load {}: {e}", checkpoint.display()),
    });
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
