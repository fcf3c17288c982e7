//! HTTP interface under `/v1`.

use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nlmaps_core::dialogue;
use nlmaps_core::mrl::{self, KeyvalRow};
use nlmaps_core::uncertainty::{self, Clarification};
use nlmaps_core::Model64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{FeedbackBody, StoreError, TaskStore};

pub struct AppState {
    /// `None` keeps the task endpoints available while `/parse` answers 503.
    pub model: Option<Model64>,
    pub store: Mutex<TaskStore>,
}

impl AppState {
    pub fn new(model: Option<Model64>, store: TaskStore) -> Arc<Self> {
        Arc::new(AppState {
            model,
            store: Mutex::new(store),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseRequest {
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntropy {
    pub token: String,
    pub span: (usize, usize),
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub parse: String,
    /// Empty when the parse is not well formed.
    pub keyvals: Vec<KeyvalRow>,
    pub clarification: Option<Clarification>,
    pub token_entropies: Vec<TokenEntropy>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownTask(_) => ApiError::NotFound(e.to_string()),
            StoreError::AlreadyAnswered(_) => ApiError::Conflict(e.to_string()),
            StoreError::InvalidFeedback(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

// Parsed by hand so that malformed bodies map to 400 regardless of headers.
fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

/// Greedy parse of `query`, its clarification and per-token entropies.
/// Extra encoders of a multi-source model receive empty sources.
pub fn parse_query(model: &Model64, query: &str) -> Result<ParseResponse, ApiError> {
    let mut sources = vec![query.to_string()];
    sources.resize(model.encoders(), String::new());
    let (hyp, clarification) = match dialogue::clarify_query(model, &sources) {
        Ok((hyp, c)) => (hyp, Some(c)),
        Err(dialogue::DialogueError::Uncertainty(_)) => (
            model
                .decode_greedy(&sources)
                .map_err(|e| ApiError::Internal(e.to_string()))?,
            None,
        ),
        Err(e) => return Err(ApiError::Internal(e.to_string())),
    };
    let token_entropies = uncertainty::token_entropies(&hyp)
        .into_iter()
        .map(|u| TokenEntropy {
            token: u.token.text,
            span: u.token.span,
            mean_entropy: u.mean_entropy,
        })
        .collect();
    Ok(ParseResponse {
        keyvals: mrl::keyval_rows(&hyp.text).unwrap_or_default(),
        parse: hyp.text,
        clarification,
        token_entropies,
    })
}

async fn parse(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<ParseResponse>, ApiError> {
    let req: ParseRequest = json_body(&body)?;
    if state.model.is_none() {
        return Err(ApiError::Unavailable("no model loaded".into()));
    }
    let response = tokio::task::spawn_blocking(move || {
        parse_query(state.model.as_ref().expect("checked above"), &req.query)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(response))
}

async fn next_task(State(state): State<Arc<AppState>>) -> Response {
    let store = state.store.lock().expect("store lock");
    match store.next() {
        Some(task) => Json(task.clone()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: FeedbackBody = json_body(&body)?;
    let fb = state.store.lock().expect("store lock").submit(&id, body)?;
    Ok(Json(fb).into_response())
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    Json(state.store.lock().expect("store lock").stats()).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/parse", post(parse))
        .route("/tasks/next", get(next_task))
        .route("/tasks/stats", get(stats))
        .route("/tasks/{id}/feedback", post(feedback))
        .with_state(state);
    Router::new().nest("/v1", v1)
}

/// Serves until the listener fails or ctrl-c is received.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("listening on http://{}/v1", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
