//! Live sessions over HTTP and WebSocket.
//!
//! `POST /sessions` creates a session, `GET /sessions/{id}/ws` attaches a
//! client, `GET /sessions/{id}/log` returns the episode log as JSON lines and
//! `GET /healthz` reports liveness. See [`wire`] for the frame format.

pub mod session;
pub mod wire;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use salm_core::llm::BackendConfig;
pub use session::{Phase, Session};
use session::Control;
use wire::{ClientFrame, ClientMessage, ServerMessage, StartParams, WIRE_SCHEMA};

pub const DEFAULT_GRACE: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub log_dir: PathBuf,
    /// Sessions that have not ended yet.
    pub max_sessions: usize,
    pub backend: BackendConfig,
    /// How long a session survives without clients.
    pub grace: Duration,
    pub default_rate: f64,
    pub max_rate: f64,
}

impl ServerConfig {
    pub fn new(log_dir: impl Into<PathBuf>) -> Self {
        Self {
            log_dir: log_dir.into(),
            max_sessions: 8,
            backend: BackendConfig::mock(),
            grace: DEFAULT_GRACE,
            default_rate: 4.0,
            max_rate: 50.0,
        }
    }
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServerConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<Session>>>>,
}

pub fn router(cfg: ServerConfig) -> Router {
    let state = AppState { cfg: Arc::new(cfg), sessions: Arc::new(Mutex::new(HashMap::new())) };
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/ws", get(session_ws))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, cfg: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(cfg)).await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn healthz(State(st): State<AppState>) -> Json<serde_json::Value> {
    let sessions = st.sessions.lock().unwrap();
    let active = sessions.values().filter(|s| s.phase() != Phase::Ended).count();
    Json(serde_json::json!({ "status": "ok", "schema": WIRE_SCHEMA, "sessions": sessions.len(), "active": active }))
}

#[derive(Debug, Default, Deserialize)]
struct CreateQuery {
    /// Start the episode right away with the posted parameters.
    #[serde(default)]
    start: bool,
}

async fn create_session(
    State(st): State<AppState>,
    Query(q): Query<CreateQuery>,
    body: Option<Json<StartParams>>,
) -> Response {
    let params = body.map(|Json(p)| p).unwrap_or_default();
    let session = {
        let mut sessions = st.sessions.lock().unwrap();
        let active = sessions.values().filter(|s| s.phase() != Phase::Ended).count();
        if active >= st.cfg.max_sessions {
            return error(StatusCode::SERVICE_UNAVAILABLE, format!("session limit {} reached", st.cfg.max_sessions));
        }
        let id = format!("s-{}", uuid::Uuid::new_v4().simple());
        let s = Session::spawn(id.clone(), params.clone(), st.cfg.clone());
        sessions.insert(id, s.clone());
        s
    };
    if q.start {
        session.send(Control::Start(params));
    }
    let body = serde_json::json!({
        "schema": WIRE_SCHEMA,
        "session": session.id,
        "ws": format!("/sessions/{}/ws", session.id),
        "log": format!("/sessions/{}/log", session.id),
    });
    (StatusCode::CREATED, Json(body)).into_response()
}

fn lookup(st: &AppState, id: &str) -> Option<Arc<Session>> {
    st.sessions.lock().unwrap().get(id).cloned()
}

async fn session_log(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(s) = lookup(&st, &id) else { return error(StatusCode::NOT_FOUND, format!("no session {id}")) };
    match s.log_jsonl() {
        Some(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        None => error(StatusCode::CONFLICT, "episode not started"),
    }
}

async fn session_ws(State(st): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    let Some(s) = lookup(&st, &id) else { return error(StatusCode::NOT_FOUND, format!("no session {id}")) };
    let grace = st.cfg.grace;
    ws.on_upgrade(move |socket| client_loop(socket, s, grace))
}

/// Checks a client frame against this connection's session and last sequence number.
fn admit(frame: &ClientFrame, session: &str, last_seq: &mut Option<u64>) -> Result<(), String> {
    if let Some(schema) = &frame.schema {
        if schema != WIRE_SCHEMA {
            return Err(format!("unsupported schema `{schema}`"));
        }
    }
    if let Some(sid) = &frame.session {
        if sid != session {
            return Err(format!("frame addressed to session {sid}"));
        }
    }
    if let Some(seq) = frame.seq {
        if last_seq.is_some_and(|l| seq <= l) {
            return Err(format!("sequence number {seq} is not increasing"));
        }
        *last_seq = Some(seq);
    }
    Ok(())
}

async fn client_loop(mut socket: WebSocket, s: Arc<Session>, grace: Duration) {
    s.connect();
    let mut rx = s.subscribe();
    let mut last_seq = None;
    loop {
        tokio::select! {
            out = rx.recv() => match out {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(session = %s.id, "client fell {n} messages behind");
                }
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(t))) => {
                    let frame = serde_json::from_str::<ClientFrame>(&t).map_err(|e| format!("bad frame: {e}"));
                    let control = frame.and_then(|f| {
                        admit(&f, &s.id, &mut last_seq)?;
                        Ok(match f.message {
                            ClientMessage::Start(p) => Control::Start(p),
                            ClientMessage::Command { text } => Control::Command(text),
                            ClientMessage::Pause => Control::Pause,
                            ClientMessage::Resume => Control::Resume,
                            ClientMessage::SetRate { rate } => Control::SetRate(rate),
                        })
                    });
                    match control {
                        Ok(c) => {
                            s.send(c);
                        }
                        Err(message) => s.emit(ServerMessage::Error { message }),
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    s.disconnect(grace);
}
