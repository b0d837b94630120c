//! Single-node HTTP service over the in-memory serving state.
//!
//! | route | |
//! |---|---|
//! | `POST /event` | record one engagement event |
//! | `GET /retrieve/{user}?now=&n=` | ranked candidates at `now` |
//! | `GET /stats` | buffer, impression and index sizes |
//! | `POST /reload` | re-read the index file and swap it in |
//! | `POST /snapshot` | write the current state to the state directory |
//!
//! An event is applied before its `POST` returns, so every later retrieve
//! sees it.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use socripple::annindex::UserIndex;
use socripple::catalog::Catalog;
use socripple::engagement::{EngagementEvent, ImpressionLog, SharedBuffer};
use socripple::ripple::{retrieve, Retrieved, RippleConfig, RippleInputs};
use socripple::snapshot::ServingState;
use socripple::socialgraph::SocialGraph;
use socripple::{Timestamp, UserId};

pub struct AppState {
    graph: SocialGraph,
    catalog: Catalog,
    index: RwLock<Arc<UserIndex>>,
    buffer: SharedBuffer,
    log: RwLock<ImpressionLog>,
    num_users: usize,
    ripple: RippleConfig,
    index_path: Option<PathBuf>,
    state_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(state: ServingState, num_users: usize, ripple: RippleConfig) -> Self {
        Self {
            graph: state.graph,
            catalog: state.catalog,
            index: RwLock::new(Arc::new(state.index)),
            buffer: SharedBuffer::new(state.buffer),
            log: RwLock::new(state.log),
            num_users,
            ripple,
            index_path: None,
            state_dir: None,
        }
    }

    /// File read by `POST /reload`.
    pub fn with_index_path(mut self, path: PathBuf) -> Self {
        self.index_path = Some(path);
        self
    }

    /// Directory written by `POST /snapshot`.
    pub fn with_state_dir(mut self, dir: PathBuf) -> Self {
        self.state_dir = Some(dir);
        self
    }

    fn index(&self) -> Arc<UserIndex> {
        self.index.read().expect("index lock").clone()
    }

    fn known_user(&self, user: UserId) -> bool {
        user.index() < self.num_users || self.index().contains(user)
    }

    /// Validates and applies one event.
    pub fn record(&self, event: &EngagementEvent) -> Result<(), ApiError> {
        if !self.known_user(event.user) {
            return Err(ApiError::BadRequest(format!("unknown user {}", event.user)));
        }
        let created = self
            .catalog
            .get(event.item)
            .ok_or_else(|| ApiError::BadRequest(format!("unknown item {}", event.item)))?
            .created_at;
        if event.at < created {
            return Err(ApiError::BadRequest(format!(
                "event at {} precedes item creation at {created}",
                event.at
            )));
        }
        let positive = self.buffer.read().config().positive;
        if positive.contains(event.signal) {
            self.buffer
                .record(event, created)
                .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        }
        self.log
            .write()
            .expect("log lock")
            .mark_shown(event.user, event.item, event.at);
        Ok(())
    }

    pub fn retrieve(&self, user: UserId, now: Timestamp, n: Option<usize>) -> Result<Vec<Retrieved>, ApiError> {
        if !self.known_user(user) {
            return Err(ApiError::NotFound(format!("unknown user {user}")));
        }
        let index = self.index();
        let buffer = self.buffer.read();
        let log = self.log.read().expect("log lock");
        let inputs = RippleInputs {
            graph: &self.graph,
            catalog: &self.catalog,
            index: &index,
            buffer: &buffer,
            log: &log,
        };
        let cfg = RippleConfig {
            n_out: n.unwrap_or(self.ripple.n_out),
            ..self.ripple
        };
        Ok(retrieve(user, now, &inputs, &cfg))
    }

    pub fn stats(&self) -> Stats {
        Stats {
            buffer_entries: self.buffer.len(),
            impressions: self.log.read().expect("log lock").len(),
            indexed_users: self.index().len(),
        }
    }

    /// Loads the index file and swaps it in; in-flight requests keep the old one.
    pub fn reload_index(&self) -> Result<usize, ApiError> {
        let path = self
            .index_path
            .as_ref()
            .ok_or_else(|| ApiError::BadRequest("no index file configured".into()))?;
        let fresh = UserIndex::load(path).map_err(|e| ApiError::Internal(e.to_string()))?;
        let n = fresh.len();
        *self.index.write().expect("index lock") = Arc::new(fresh);
        Ok(n)
    }

    pub fn snapshot(&self) -> Result<PathBuf, ApiError> {
        let dir = self
            .state_dir
            .clone()
            .ok_or_else(|| ApiError::BadRequest("no state directory configured".into()))?;
        let state = ServingState {
            graph: self.graph.clone(),
            catalog: self.catalog.clone(),
            index: (*self.index()).clone(),
            buffer: self.buffer.read().clone(),
            log: self.log.read().expect("log lock").clone(),
        };
        state.save(&dir).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub buffer_entries: usize,
    pub impressions: usize,
    pub indexed_users: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct RetrieveQuery {
    now: Timestamp,
    n: Option<usize>,
}

async fn post_event(State(app): State<Arc<AppState>>, body: Bytes) -> Result<StatusCode, ApiError> {
    let event: EngagementEvent =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed event: {e}")))?;
    app.record(&event)?;
    Ok(StatusCode::OK)
}

async fn get_retrieve(
    State(app): State<Arc<AppState>>,
    Path(user): Path<u32>,
    Query(q): Query<RetrieveQuery>,
) -> Result<Json<Vec<Retrieved>>, ApiError> {
    app.retrieve(UserId(user), q.now, q.n).map(Json)
}

async fn get_stats(State(app): State<Arc<AppState>>) -> Json<Stats> {
    Json(app.stats())
}

async fn post_reload(State(app): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let n = app.reload_index()?;
    Ok(Json(serde_json::json!({ "indexed_users": n })))
}

async fn post_snapshot(State(app): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let dir = app.snapshot()?;
    Ok(Json(serde_json::json!({ "state_dir": dir.display().to_string() })))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/event", post(post_event))
        .route("/retrieve/{user}", get(get_retrieve))
        .route("/stats", get(get_stats))
        .route("/reload", post(post_reload))
        .route("/snapshot", post(post_snapshot))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
