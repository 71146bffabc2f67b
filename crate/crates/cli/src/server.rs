//! HTTP chat service: session lifecycle, one message in flight per session,
//! and JSONL persistence before every response.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chacha_core::log::LogError;
use chacha_core::{
    Attachments, Engine, EngineError, LogRecord, LogStore, Phase, PickerPayload, Role, Session,
    SessionCell, SessionStatus, Turn,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

/// A turn as the web client sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiMessage {
    pub index: usize,
    pub role: Role,
    pub content: String,
    pub phase: Phase,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachments: Option<Attachments>,
    /// Client-side delivery state; the server only sends delivered turns.
    #[serde(default)]
    pub pending: bool,
}

impl From<&Turn> for ApiMessage {
    fn from(t: &Turn) -> Self {
        ApiMessage {
            index: t.index,
            role: t.role,
            content: t.content.clone(),
            phase: t.phase,
            timestamp: t.timestamp,
            attachments: t.attachments.clone(),
            pending: false,
        }
    }
}

impl From<&ApiMessage> for Turn {
    fn from(m: &ApiMessage) -> Self {
        Turn {
            index: m.index,
            role: m.role,
            content: m.content.clone(),
            phase: m.phase,
            attachments: m.attachments.clone(),
            timestamp: m.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub user_name: String,
    pub user_age: u32,
    pub locale: String,
    pub phase: Phase,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub messages: Vec<ApiMessage>,
}

impl From<&Session> for ApiSession {
    fn from(s: &Session) -> Self {
        ApiSession {
            session_id: s.session_id.clone(),
            user_name: s.user_name.clone(),
            user_age: s.user_age,
            locale: s.locale.clone(),
            phase: s.phase,
            status: s.status,
            created_at: s.created_at,
            messages: s.turns.iter().map(ApiMessage::from).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub name: String,
    pub age: i64,
    #[serde(default)]
    pub locale: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub messages: Vec<ApiMessage>,
}

#[derive(Debug, Default, Deserialize)]
pub struct PostMessage {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub picked_emotion_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Reply {
    pub messages: Vec<ApiMessage>,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picker: Option<PickerPayload>,
    pub session_ended: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServerOptions {
    pub max_session_minutes: Option<u64>,
}

struct Entry {
    cell: SessionCell,
    /// Last committed state, readable while a message holds the cell.
    snapshot: RwLock<Session>,
}

impl Entry {
    fn new(session: Session) -> Self {
        Entry {
            snapshot: RwLock::new(session.clone()),
            cell: SessionCell::new(session),
        }
    }

    fn publish(&self, session: &Session) {
        *self.snapshot.write().unwrap() = session.clone();
    }
}

pub struct AppState {
    engine: Engine,
    store: LogStore,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    options: ServerOptions,
}

impl AppState {
    /// Recovers every stored session and serves them alongside new ones.
    pub fn open(engine: Engine, store: LogStore, options: ServerOptions) -> Result<Arc<Self>, LogError> {
        let recovered = store.load_all()?;
        tracing::info!(sessions = recovered.len(), root = %store.root().display(), "log store opened");
        let sessions = recovered
            .into_iter()
            .map(|s| (s.session_id.clone(), Arc::new(Entry::new(s))))
            .collect();
        Ok(Arc::new(AppState {
            engine,
            store,
            sessions: RwLock::new(sessions),
            options,
        }))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn store(&self) -> &LogStore {
        &self.store
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or(ApiError::NotFound)
    }

    fn expired(&self, session: &Session) -> bool {
        let Some(limit) = self.options.max_session_minutes else {
            return false;
        };
        self.engine.clock().now() - session.created_at > chrono::Duration::minutes(limit as i64)
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound,
    BadRequest(String),
    Validation(String),
    Busy,
    Gone,
    Upstream(String),
    Internal(String),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Validation(m) => ApiError::Validation(m),
            EngineError::Ended => ApiError::Gone,
            EngineError::Busy(_) => ApiError::Busy,
            e @ (EngineError::Upstream(_) | EngineError::EmptyReply | EngineError::Analyzer(_)) => {
                ApiError::Upstream(e.to_string())
            }
            e @ (EngineError::Contract(_) | EngineError::Invariant(_)) => {
                ApiError::Internal(e.to_string())
            }
        }
    }
}

impl From<LogError> for ApiError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Unknown(_) | LogError::BadId(_) => ApiError::NotFound,
            e => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r {
            JsonRejection::JsonDataError(e) => ApiError::Validation(e.body_text()),
            r => ApiError::BadRequest(r.body_text()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({"error": "no such session"})),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({"error": m})),
            ApiError::Validation(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({"error": m})),
            ApiError::Busy => (
                StatusCode::CONFLICT,
                json!({"error": "a message for this session is already being processed"}),
            ),
            ApiError::Gone => (StatusCode::GONE, json!({"error": "session has ended"})),
            ApiError::Upstream(m) => {
                tracing::warn!(error = %m, "upstream failure");
                (StatusCode::BAD_GATEWAY, json!({"error": m, "retry_safe": true}))
            }
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "internal error");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": m}))
            }
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(end_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Adds browser access: CORS for `allowed_origin` and the built web client
/// served from `static_dir` for any path the API does not claim.
pub fn with_web(
    router: Router,
    allowed_origin: Option<&str>,
    static_dir: Option<&std::path::Path>,
) -> anyhow::Result<Router> {
    let mut router = router;
    if let Some(dir) = static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    if let Some(origin) = allowed_origin {
        let cors = CorsLayer::new()
            .allow_origin(HeaderValue::from_str(origin)?)
            .allow_methods([Method::GET, Method::POST, Method::DELETE])
            .allow_headers([header::CONTENT_TYPE]);
        router = router.layer(cors);
    }
    Ok(router)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body?;
    let (session, greeting) = state
        .engine
        .create_session(&req.name, req.age, req.locale.as_deref())
        .await?;
    let id = session.session_id.clone();
    let record = LogRecord::system(&id, &greeting.turn, greeting.prompt_digest.clone(), greeting.usage);
    state.store.create(&session, &[record])?;
    let messages = session.turns.iter().map(ApiMessage::from).collect();
    state
        .sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(Entry::new(session)));
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(Created { session_id: id, messages })))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Result<Json<Reply>, ApiError> {
    let entry = state.entry(&id)?;
    let Json(req) = body?;
    let mut guard = entry.cell.try_acquire().map_err(|_| ApiError::Busy)?;
    if !guard.is_active() {
        return Err(ApiError::Gone);
    }
    if state.expired(&guard) {
        let mut ended = guard.clone();
        state.engine.end_session(&mut ended);
        state.store.save_state(&ended)?;
        *guard = ended;
        entry.publish(&guard);
        return Err(ApiError::Gone);
    }

    let mut work = guard.clone();
    let out = state
        .engine
        .handle_user_message(&mut work, req.text.as_deref().unwrap_or(""), &req.picked_emotion_ids)
        .await?;
    let mut records = vec![LogRecord::user(&id, &out.user_turn)];
    for t in &out.system_turns {
        records.push(LogRecord::system(&id, t, out.prompt_digest.clone(), out.usage));
    }
    if let Err(e) = state.store.append(&work, &records) {
        // Memory must match disk: reload whatever was committed.
        match state.store.recover(&id) {
            Ok(s) => *guard = s,
            Err(re) => tracing::error!(session = %id, error = %re, "recovery after failed append"),
        }
        entry.publish(&guard);
        return Err(e.into());
    }
    *guard = work;
    entry.publish(&guard);
    Ok(Json(Reply {
        messages: out.system_turns.iter().map(ApiMessage::from).collect(),
        phase: guard.phase,
        picker: out.picker,
        session_ended: out.session_ended,
    }))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ApiSession>, ApiError> {
    let entry = state.entry(&id)?;
    let snapshot = entry.snapshot.read().unwrap();
    Ok(Json(ApiSession::from(&*snapshot)))
}

async fn end_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let entry = state.entry(&id)?;
    let mut guard = entry.cell.acquire().await;
    if guard.is_active() {
        let mut ended = guard.clone();
        state.engine.end_session(&mut ended);
        state.store.save_state(&ended)?;
        *guard = ended;
        entry.publish(&guard);
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    state.entry(&id)?;
    let bytes = state.store.read_export(&id)?;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))],
        bytes,
    )
        .into_response())
}
