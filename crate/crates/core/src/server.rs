//! HTTP API.
//!
//! | method | path                       | body                               | reply                       |
//! |--------|----------------------------|------------------------------------|-----------------------------|
//! | POST   | `/sessions`                |                                    | `{"session_id": n}`         |
//! | POST   | `/sessions/{id}/messages`  | `{"text": "..."}`                  | turn result                 |
//! | POST   | `/sessions/{id}/end`       |                                    | forgetting report           |
//! | GET    | `/sessions/{id}/memories`  |                                    | `{"session_id", "memories"}`|
//! | POST   | `/sessions/{id}/qa`        | `[{"question", "gold_answer"}]`    | `{"stored": n}`             |
//! | GET    | `/healthz`                 |                                    | `{"status": "ok"}`          |
//!
//! Errors come back as `{"error": "...", "kind": "..."}`.

use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::ChatEngine;
use crate::error::Error;
use crate::memory::MemoryId;
use crate::session::QAPair;

pub type SharedEngine = Arc<Mutex<ChatEngine>>;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

fn kind(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
        Error::Lifecycle(m) if m.contains("does not exist") || m.starts_with("no session") => {
            (StatusCode::NOT_FOUND, "not_found")
        }
        Error::Lifecycle(_) => (StatusCode::CONFLICT, "lifecycle"),
        Error::ProviderUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable"),
        Error::Parse { .. } => (StatusCode::BAD_GATEWAY, "provider_parse"),
        Error::Generation(_) => (StatusCode::BAD_GATEWAY, "generation"),
        Error::Consistency(_) => (StatusCode::INTERNAL_SERVER_ERROR, "consistency"),
        Error::Persistence { .. } | Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "persistence"),
        Error::Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "config"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = kind(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({"error": self.0.to_string(), "kind": kind}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError(Error::invalid(format!("bad request body: {e}"))))
}

/// Run `f` on the engine off the async runtime.
async fn with_engine<T, F>(engine: &SharedEngine, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut ChatEngine) -> crate::Result<T> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = engine
            .lock()
            .map_err(|_| Error::Consistency("engine lock poisoned".into()))?;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError(Error::Consistency(format!("worker failed: {e}"))))?
    .map_err(ApiError)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QaBody {
    pub question: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_memory_id: Option<MemoryId>,
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(State(engine): State<SharedEngine>) -> ApiResult<SessionCreated> {
    let session_id = with_engine(&engine, |e| e.open_session()).await?;
    Ok(Json(SessionCreated { session_id }))
}

async fn post_message(
    State(engine): State<SharedEngine>,
    Path(id): Path<u32>,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let msg: MessageBody = body(&bytes)?;
    let turn = with_engine(&engine, move |e| e.handle_turn(id, &msg.text)).await?;
    Ok(Json(turn).into_response())
}

async fn end_session(State(engine): State<SharedEngine>, Path(id): Path<u32>) -> Result<Response, ApiError> {
    let report = with_engine(&engine, move |e| e.close_session(id)).await?;
    Ok(Json(report).into_response())
}

async fn memories(State(engine): State<SharedEngine>, Path(id): Path<u32>) -> Result<Response, ApiError> {
    let memories = with_engine(&engine, move |e| {
        if e.session(id).is_none() {
            return Err(Error::Lifecycle(format!("session {id} does not exist")));
        }
        e.memories()
    })
    .await?;
    Ok(Json(json!({"session_id": id, "memories": memories})).into_response())
}

async fn post_qa(
    State(engine): State<SharedEngine>,
    Path(id): Path<u32>,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let pairs: Vec<QaBody> = body(&bytes)?;
    let pairs: Vec<QAPair> = pairs
        .into_iter()
        .map(|p| QAPair {
            question: p.question,
            gold_answer: p.gold_answer,
            session_of_origin: id,
            gold_memory_id: p.gold_memory_id,
        })
        .collect();
    let stored = pairs.len();
    with_engine(&engine, move |e| e.add_qa(id, pairs)).await?;
    Ok(Json(json!({"stored": stored})).into_response())
}

pub fn router(engine: SharedEngine) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/end", post(end_session))
        .route("/sessions/{id}/memories", get(memories))
        .route("/sessions/{id}/qa", post(post_qa))
        .with_state(engine)
}

/// Serve on `listener` until `shutdown` resolves, then compact the store.
pub async fn serve_on<S>(listener: tokio::net::TcpListener, engine: SharedEngine, shutdown: S) -> crate::Result<()>
where
    S: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(engine.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let mut e = engine
        .lock()
        .map_err(|_| Error::Consistency("engine lock poisoned".into()))?;
    e.flush()?;
    log::info!("store flushed");
    Ok(())
}

/// Bind `addr` and serve until Ctrl-C.
pub async fn serve(engine: ChatEngine, addr: &str) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {}", listener.local_addr()?);
    let shutdown = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot listen for Ctrl-C: {e}");
            std::future::pending::<()>().await;
        }
    };
    serve_on(listener, Arc::new(Mutex::new(engine)), shutdown).await
}
