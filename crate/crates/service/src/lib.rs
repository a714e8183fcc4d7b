//! HTTP service hosting live simulation sessions.
//!
//! A session runs a trained policy on the surrogate environment and streams
//! its state as server-sent events. A human observer can post a terrain
//! description at any time; it is translated, embedded and swapped into the
//! running policy between two steps. Swapping context mid-episode goes beyond
//! training, where context is fixed for the whole episode.

mod error;
mod registry;
mod worker;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use ctxloco_core::embedding::Method;
use ctxloco_core::env::EnvConfig;
use ctxloco_core::session::{session_setup, SessionSim, StateEvent};
use ctxloco_core::terrain::{PropertyLevels, TerrainParams};
use ctxloco_core::translator::Translator;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::StreamExt;
use tower_http::services::ServeDir;

pub use error::{ApiError, ErrorBody};
pub use registry::{PolicyInfo, PolicyRegistry};
pub use worker::{ContextOutcome, Snapshot, Status, Verb};

use worker::{Command, Worker, WorkerConfig};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub steps_per_second: f64,
    pub turbo: bool,
    pub decimation: usize,
    pub heartbeat: Duration,
    pub max_sessions: usize,
    pub env: EnvConfig,
    /// Directory for per-session JSON-lines journals.
    pub journal_dir: Option<PathBuf>,
    /// Web console assets served under `/`.
    pub static_dir: Option<PathBuf>,
    pub event_buffer: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            steps_per_second: 50.0,
            turbo: false,
            decimation: 5,
            heartbeat: Duration::from_secs(5),
            max_sessions: 16,
            env: EnvConfig::default(),
            journal_dir: None,
            static_dir: None,
            event_buffer: 4096,
        }
    }
}

struct SessionHandle {
    policy_id: String,
    method: Method,
    commands: mpsc::Sender<Command>,
    events: broadcast::Sender<StateEvent>,
    snapshot: watch::Receiver<Snapshot>,
    last_used: u64,
}

#[derive(Default)]
struct SessionTable {
    sessions: HashMap<String, SessionHandle>,
    clock: u64,
    next_id: u64,
}

impl SessionTable {
    fn touch(&mut self, id: &str) -> Option<&SessionHandle> {
        self.clock += 1;
        let clock = self.clock;
        let h = self.sessions.get_mut(id)?;
        h.last_used = clock;
        Some(h)
    }

    /// Drops least recently used sessions until one more fits.
    fn make_room(&mut self, cap: usize) {
        while self.sessions.len() >= cap.max(1) {
            let Some(oldest) = self
                .sessions
                .iter()
                .min_by_key(|(_, h)| h.last_used)
                .map(|(id, _)| id.clone())
            else {
                break;
            };
            log::info!("evicting session {oldest}");
            self.sessions.remove(&oldest);
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    policies: PolicyRegistry,
    translator: Arc<Translator>,
    sessions: Mutex<SessionTable>,
}

impl AppState {
    pub fn new(config: ServiceConfig, policies: PolicyRegistry, translator: Translator) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                policies,
                translator: Arc::new(translator),
                sessions: Mutex::new(SessionTable::default()),
            }),
        }
    }

    pub fn session_count(&self) -> usize {
        self.table().sessions.len()
    }

    fn table(&self) -> std::sync::MutexGuard<'_, SessionTable> {
        self.inner.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn handle<T>(&self, id: &str, f: impl FnOnce(&SessionHandle) -> T) -> Result<T, ApiError> {
        let mut table = self.table();
        let h = table.touch(id).ok_or_else(|| ApiError::not_found("session", id))?;
        Ok(f(h))
    }

    async fn translate(&self, description: String) -> Result<ctxloco_core::translator::TranslationResult, ApiError> {
        let translator = Arc::clone(&self.inner.translator);
        tokio::task::spawn_blocking(move || translator.translate(&description))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(ApiError::from)
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.inner.config.static_dir.clone();
    let api = Router::new()
        .route("/v1/policies", get(list_policies))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_status))
        .route("/v1/sessions/{id}/events", get(stream_events))
        .route("/v1/sessions/{id}/context", post(apply_context))
        .route("/v1/sessions/{id}/control", post(control))
        .route("/v1/sessions/{id}/journal", get(journal))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn list_policies(State(state): State<AppState>) -> Json<Vec<PolicyInfo>> {
    Json(state.inner.policies.list())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub policy: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub terrain: Option<TerrainParams>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub policy: String,
    pub method: Method,
    pub status: Status,
    pub terrain: TerrainParams,
    /// Translated levels when a description was given.
    pub levels: Option<PropertyLevels>,
    pub embedding: Vec<u8>,
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let policy = state
        .inner
        .policies
        .get(&req.policy)
        .ok_or_else(|| ApiError::not_found("policy", &req.policy))?;
    let levels = match &req.description {
        Some(d) => Some(state.translate(d.clone()).await?.levels),
        None => None,
    };
    let (terrain, embedding) = session_setup(&policy, levels.as_ref(), req.terrain)?;
    let embedding_values = embedding.values.clone();

    let config = &state.inner.config;
    let id = {
        let mut table = state.table();
        table.next_id += 1;
        format!("s{:06}", table.next_id)
    };
    let sim = SessionSim::new(
        (*policy).clone(),
        terrain,
        embedding,
        req.description.clone(),
        req.seed,
        config.env,
    )?;

    let (cmd_tx, cmd_rx) = mpsc::channel(64);
    let (event_tx, _) = broadcast::channel(config.event_buffer.max(16));
    let (snap_tx, snap_rx) = watch::channel(Worker::snapshot_of(&sim, Status::Paused));
    let worker_config = WorkerConfig {
        steps_per_second: config.steps_per_second,
        turbo: config.turbo,
        decimation: config.decimation,
        journal_path: config.journal_dir.as_ref().map(|d| d.join(format!("{id}.jsonl"))),
    };
    tokio::spawn(Worker::new(sim, worker_config, cmd_rx, event_tx.clone(), snap_tx).run());

    {
        let mut table = state.table();
        table.make_room(config.max_sessions);
        table.clock += 1;
        let last_used = table.clock;
        table.sessions.insert(
            id.clone(),
            SessionHandle {
                policy_id: req.policy.clone(),
                method: policy.embedding_mode(),
                commands: cmd_tx,
                events: event_tx,
                snapshot: snap_rx,
                last_used,
            },
        );
    }
    log::info!("created session {id} with policy {}", req.policy);
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            id,
            policy: req.policy,
            method: policy.embedding_mode(),
            status: Status::Paused,
            terrain,
            levels,
            embedding: embedding_values,
        }),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub policy: String,
    pub method: Method,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

async fn session_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionStatus>, ApiError> {
    let status = state.handle(&id, |h| SessionStatus {
        id: id.clone(),
        policy: h.policy_id.clone(),
        method: h.method,
        snapshot: h.snapshot.borrow().clone(),
    })?;
    Ok(Json(status))
}

async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = state.handle(&id, |h| h.events.subscribe())?;
    let stream = BroadcastStream::new(rx).filter_map(|item| match item {
        Ok(event) => Event::default().json_data(&event).ok().map(Ok),
        Err(e) => {
            log::warn!("event subscriber fell behind: {e}");
            None
        }
    });
    let keep_alive = KeepAlive::new()
        .interval(state.inner.config.heartbeat)
        .text("heartbeat");
    Ok(Sse::new(stream).keep_alive(keep_alive))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplyContext {
    pub description: String,
    #[serde(default)]
    pub retarget_terrain: bool,
}

async fn apply_context(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ApplyContext>,
) -> Result<Json<ContextOutcome>, ApiError> {
    let (method, commands) = state.handle(&id, |h| (h.method, h.commands.clone()))?;
    if method != Method::Embedding {
        return Err(ApiError::conflict(format!(
            "policy consumes no language context (method {method})"
        )));
    }
    let levels = state.translate(req.description.clone()).await?.levels;
    let (reply, response) = oneshot::channel();
    commands
        .send(Command::Context {
            description: req.description,
            levels,
            retarget_terrain: req.retarget_terrain,
            reply,
        })
        .await
        .map_err(|_| ApiError::gone())?;
    Ok(Json(response.await.map_err(|_| ApiError::gone())??))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlRequest {
    pub verb: Verb,
}

async fn control(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ControlRequest>,
) -> Result<Json<Snapshot>, ApiError> {
    let commands = state.handle(&id, |h| h.commands.clone())?;
    let (reply, response) = oneshot::channel();
    commands
        .send(Command::Control { verb: req.verb, reply })
        .await
        .map_err(|_| ApiError::gone())?;
    let snapshot = response.await.map_err(|_| ApiError::gone())??;
    if req.verb == Verb::Delete {
        state.table().sessions.remove(&id);
        log::info!("deleted session {id}");
    }
    Ok(Json(snapshot))
}

async fn journal(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let commands = state.handle(&id, |h| h.commands.clone())?;
    let (reply, response) = oneshot::channel();
    commands
        .send(Command::Journal { reply })
        .await
        .map_err(|_| ApiError::gone())?;
    let body = response.await.map_err(|_| ApiError::gone())?;
    Ok(([("content-type", "application/x-ndjson")], body))
}
