//! HTTP service: parse the request, recommend, attach evidence, check it,
//! and keep per-session history.
//!
//! Endpoints: `POST /sessions`, `POST /recommend`, `GET /sessions/{id}`,
//! `GET /health`.

pub mod evidence;
pub mod parse;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use taskmcp_core::recommend::RecommendError;
use taskmcp_core::text::normalize_category;
use taskmcp_core::{RerankStatus, System};

use crate::artifacts::sha256_hex;
use crate::engine::Engine;
use evidence::{assemble, Card, DraftContext, Reliability, ResponseGenerator, TemplateGenerator};
use parse::{Constraints, ParseContext, RequestParser, RuleParser, StructuredTaskSpec};

pub const DEFAULT_SERVICE_K: usize = 5;

/// Explicit constraint values from the client; they win over parsed ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcategory: Option<String>,
    /// Drop every constraint accumulated so far before applying this turn.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clear: bool,
}

impl Overrides {
    fn constraints(&self) -> Constraints {
        let norm = |v: &Option<String>| v.as_deref().map(normalize_category).filter(|s| !s.is_empty());
        Constraints {
            language: norm(&self.language),
            system: self.system.as_deref().map(System::parse_lenient),
            theme: norm(&self.theme),
            category: norm(&self.category),
            subcategory: norm(&self.subcategory),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub task_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Overrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Accepted,
    Fallback,
    Clarification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub session_id: String,
    pub turn: usize,
    pub status: ResponseStatus,
    pub recommendations: Vec<Card>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clarifications: Vec<String>,
    pub spec: StructuredTaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<Reliability>,
    /// Why the re-ranker's answer was discarded, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_id: Option<String>,
    pub snapshot: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub request: RecommendRequest,
    pub response: RecommendResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Session {
    pub session_id: String,
    pub spec: Option<StructuredTaskSpec>,
    pub last_pool: Option<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Recommendations per response when the request does not say.
    pub k: usize,
    /// Append-only JSONL turn log; sessions in it are restored at startup.
    pub session_log: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new() -> Self {
        ServiceConfig { k: DEFAULT_SERVICE_K, session_log: None }
    }
}

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    engine: RwLock<Option<Arc<Engine>>>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    parser: Arc<dyn RequestParser>,
    generator: Arc<dyn ResponseGenerator>,
    config: ServiceConfig,
    log: Option<Mutex<File>>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    session_id: String,
    turn: usize,
    request: RecommendRequest,
    response: RecommendResponse,
}

fn restore(path: &Path) -> std::io::Result<HashMap<String, Session>> {
    let mut sessions: HashMap<String, Session> = HashMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(sessions);
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(entry) = serde_json::from_str::<LogLine>(&line) else {
            log::warn!("{}:{}: unreadable session log line skipped", path.display(), i + 1);
            continue;
        };
        let s = sessions.entry(entry.session_id.clone()).or_insert_with(|| Session {
            session_id: entry.session_id.clone(),
            ..Default::default()
        });
        s.spec = Some(entry.response.spec.clone());
        if entry.response.pool_id.is_some() {
            s.last_pool.clone_from(&entry.response.pool_id);
        }
        s.turns.push(Turn { request: entry.request, response: entry.response });
    }
    Ok(sessions)
}

impl AppState {
    pub fn new(engine: Option<Engine>, config: ServiceConfig) -> std::io::Result<Self> {
        let (sessions, log) = match &config.session_log {
            Some(path) => {
                let sessions = restore(path)?;
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                (sessions, Some(Mutex::new(file)))
            }
            None => (HashMap::new(), None),
        };
        let sessions = sessions
            .into_iter()
            .map(|(id, s)| (id, Arc::new(tokio::sync::Mutex::new(s))))
            .collect();
        Ok(AppState {
            engine: RwLock::new(engine.map(Arc::new)),
            sessions: Mutex::new(sessions),
            parser: Arc::new(RuleParser),
            generator: Arc::new(TemplateGenerator),
            config,
            log,
        })
    }

    pub fn with_parser(mut self, parser: Arc<dyn RequestParser>) -> Self {
        self.parser = parser;
        self
    }

    pub fn with_generator(mut self, generator: Arc<dyn ResponseGenerator>) -> Self {
        self.generator = generator;
        self
    }

    /// Replace the engine; requests already running keep the old snapshot.
    pub fn swap_engine(&self, engine: Engine) {
        *self.engine.write().expect("engine lock") = Some(Arc::new(engine));
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().expect("engine lock").clone()
    }

    pub fn create_session(&self) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let session = Session { session_id: id.clone(), ..Default::default() };
        self.sessions.lock().expect("session table").insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        id
    }

    fn session(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("session table").get(id).cloned()
    }

    pub async fn session_snapshot(&self, id: &str) -> Option<Session> {
        let handle = self.session(id)?;
        let s = handle.lock().await;
        Some(s.clone())
    }

    fn append_log(&self, session: &Session, turn: &Turn) {
        let Some(log) = &self.log else { return };
        let line = LogLine {
            session_id: session.session_id.clone(),
            turn: turn.response.turn,
            request: turn.request.clone(),
            response: turn.response.clone(),
        };
        let mut f = log.lock().expect("log lock");
        let text = serde_json::to_string(&line).expect("turns serialize");
        if let Err(e) = writeln!(f, "{text}").and_then(|_| f.flush()) {
            log::error!("failed to append to the session log: {e}");
        }
    }

    /// One recommendation turn against `session`. Blocking: runs the engine
    /// and any re-rank backend call on the current thread.
    pub fn run_turn(&self, engine: &Engine, session: &mut Session, request: RecommendRequest) -> Result<RecommendResponse, ApiError> {
        let text = request.task_text.trim();
        if text.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "task_text must not be empty"));
        }
        let k = request.k.unwrap_or(self.config.k);
        if k == 0 {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "k must be at least 1"));
        }
        let understands = |t: &str| engine.understands(t);
        let ctx = ParseContext { themes: &engine.themes, taxonomy: engine.taxonomy(), understands: &understands };
        let overrides = request.overrides.clone().unwrap_or_default();
        let previous = session.spec.clone().map(|mut p| {
            if overrides.clear {
                p.constraints = Constraints::default();
            }
            p
        });
        let mut spec = self.parser.parse(text, previous.as_ref(), &ctx);
        spec.constraints.merge(&overrides.constraints());

        let turn = session.turns.len() + 1;
        let mut response = RecommendResponse {
            session_id: session.session_id.clone(),
            turn,
            status: ResponseStatus::Clarification,
            recommendations: Vec::new(),
            clarifications: spec.clarifications.clone(),
            spec: spec.clone(),
            reliability: None,
            rerank_reason: None,
            explanation: None,
            pool_id: None,
            snapshot: engine.snapshot_id().to_string(),
        };
        if spec.complete {
            let rec = engine.recommend(&spec.to_query(), Some(k)).map_err(|e| match e {
                RecommendError::PoolTooSmall { .. } | RecommendError::Config(_) => {
                    ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
                }
                other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
            })?;
            let dctx = DraftContext { spec: &spec, recommendation: &rec, engine, k };
            let (draft, reliability, _) = assemble(self.generator.as_ref(), &dctx);
            let pool_ids: Vec<&str> = rec.pool.ids().collect();
            let pool_id = format!("{}:{}", &engine.snapshot_id()[..12], &sha256_hex(pool_ids.join("\n").as_bytes())[..16]);
            response.status = match rec.list.status {
                RerankStatus::Accepted => ResponseStatus::Accepted,
                RerankStatus::Fallback => ResponseStatus::Fallback,
            };
            response.recommendations = draft.cards;
            response.reliability = Some(reliability);
            response.rerank_reason = rec.list.reason.as_ref().map(|r| r.code().to_string());
            response.explanation = rec.list.explanation.clone().filter(|_| rec.list.status == RerankStatus::Accepted);
            response.pool_id = Some(pool_id.clone());
            session.last_pool = Some(pool_id);
        }
        session.spec = Some(spec);
        let turn = Turn { request, response: response.clone() };
        self.append_log(session, &turn);
        session.turns.push(turn);
        Ok(response)
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))
}

async fn create_session(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    (StatusCode::CREATED, Json(json!({ "session_id": state.create_session() })))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Session>, ApiError> {
    state
        .session_snapshot(&id)
        .await
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let request = body(payload)?;
    if request.task_text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "task_text must not be empty"));
    }
    let engine = state
        .engine()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine is not loaded yet"))?;
    let handle = match &request.session_id {
        Some(id) => state
            .session(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?,
        None => {
            let id = state.create_session();
            state.session(&id).expect("just created")
        }
    };
    let mut session = handle.lock_owned().await;
    let st = state.clone();
    tokio::task::spawn_blocking(move || st.run_turn(&engine, &mut session, request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.engine() {
        Some(e) => Json(json!({
            "status": "ok",
            "servers": e.servers().len(),
            "snapshot": e.snapshot_id(),
            "reranker": e.rerank.name(),
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/recommend", post(recommend))
        .route("/health", get(health))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
