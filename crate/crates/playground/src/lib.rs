//! HTTP API behind the interactive playground.
//!
//! Sessions live in memory. Each one has a single writer at a time while
//! readers keep seeing the last completed revision.

mod api;
mod error;
mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use som_gateway::{Gateway, SegmenterClient};
use tower_http::cors::CorsLayer;

pub use api::{ChatReply, ChatTurnRequest, CreateSessionRequest, EditReply, ExportReply};
pub use error::ApiError;
pub use session::{ContextPolicy, ConversationTurn, MarkEdit, Session, SessionView};

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub struct PlaygroundConfig {
    /// Model name sent with chat requests.
    pub model: String,
    /// Root for relative paths in file-based partition sources.
    pub data_root: PathBuf,
    /// Where `POST /sessions/{id}/export` writes.
    pub export_dir: PathBuf,
    pub default_context: ContextPolicy,
}

impl Default for PlaygroundConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            data_root: PathBuf::from("."),
            export_dir: PathBuf::from("exports"),
            default_context: ContextPolicy::Accumulated,
        }
    }
}

pub(crate) struct SessionSlot {
    /// Held for the whole of a mutating call.
    pub writer: tokio::sync::Mutex<()>,
    pub current: RwLock<Arc<Session>>,
}

impl SessionSlot {
    pub fn snapshot(&self) -> Arc<Session> {
        self.current.read().expect("session lock poisoned").clone()
    }

    pub fn publish(&self, s: Session) -> Arc<Session> {
        let s = Arc::new(s);
        *self.current.write().expect("session lock poisoned") = s.clone();
        s
    }
}

pub struct AppState {
    pub(crate) sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    pub(crate) gateway: Gateway,
    pub(crate) segmenter: SegmenterClient,
    pub(crate) config: PlaygroundConfig,
}

impl AppState {
    pub fn new(gateway: Gateway, segmenter: SegmenterClient, config: PlaygroundConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(HashMap::new()),
            gateway,
            segmenter,
            config,
        })
    }

    pub(crate) fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NoSession(id.to_string()))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table poisoned").len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/edits", post(api::apply_edit))
        .route("/sessions/{id}/chat", post(api::chat))
        .route("/sessions/{id}/preview.png", get(api::preview))
        .route("/sessions/{id}/export", post(api::export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(state)
}
