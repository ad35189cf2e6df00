//! HTTP routes over a [`SessionStore`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/health` | | `{"status": "ok"}` |
//! | POST | `/sessions` | [`CreateSession`] | 201, session document |
//! | GET | `/sessions` | | list of [`SessionSummary`](crate::session::SessionSummary) |
//! | GET | `/sessions/{id}` | | session document |
//! | POST | `/sessions/{id}/measurements` | [`Measurement`] | [`MeasureResponse`](crate::store::MeasureResponse) |
//! | POST | `/sessions/{id}/placements` | [`Placement`] | [`PlacementResponse`](crate::store::PlacementResponse) |
//! | GET | `/sessions/{id}/trace` | | trace CSV |
//!
//! Errors are `{"error": {"kind", "field"?, "message"}}` with status 400
//! (validation), 404, 409 (no pending placement, version mismatch, or an
//! unflagged override), 422 (solver failure) or 500.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::session::{CreateSession, Measurement, Placement};
use crate::store::SessionStore;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::Validation { .. } => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.body() }))).into_response()
    }
}

/// Parses a JSON body, reporting the path of the offending field.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::validation(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })
}

type Store = Arc<SessionStore>;

/// Runs store work off the async executor; solver-backed session creation can take seconds.
async fn blocking<T, F>(f: F) -> Result<T>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Storage(format!("worker failed: {e}")))?
}

fn document(s: &crate::session::Session) -> Result<Response> {
    Ok(
        Json(serde_json::to_value(s.view()?).map_err(|e| ServiceError::Storage(e.to_string()))?)
            .into_response(),
    )
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create(State(store): State<Store>, body: Bytes) -> Result<Response> {
    let req: CreateSession = parse_body(&body)?;
    let s = blocking(move || store.create(req)).await?;
    Ok((StatusCode::CREATED, document(&s)?).into_response())
}

async fn list(State(store): State<Store>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": store.list() }))
}

async fn fetch(State(store): State<Store>, Path(id): Path<String>) -> Result<Response> {
    document(&store.get(&id)?)
}

async fn measure(State(store): State<Store>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let m: Measurement = parse_body(&body)?;
    Ok(Json(blocking(move || store.measure(&id, m)).await?).into_response())
}

async fn place(State(store): State<Store>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let p: Placement = parse_body(&body)?;
    Ok(Json(blocking(move || store.confirm(&id, p)).await?).into_response())
}

async fn trace(State(store): State<Store>, Path(id): Path<String>) -> Result<Response> {
    let csv = store.trace_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(fetch))
        .route("/sessions/{id}/measurements", post(measure))
        .route("/sessions/{id}/placements", post(place))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
