use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ServiceError;
use crate::store::{SessionRequest, SessionStore, Submission};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": self.code(), "detail": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

/// Parses a JSON body, reporting failures in the service's error format.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

/// Runs store work off the async executor; sessions train classifiers and
/// score pools, which must not stall other connections.
async fn blocking<T, F>(store: Arc<SessionStore>, f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&SessionStore) -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&store)).await {
        Ok(out) => out.map(Json),
        Err(e) => Err(ServiceError::Pipeline(supercd::Error::Data(format!("worker panicked: {e}")))),
    }
}

async fn start(State(store): State<Arc<SessionStore>>, body: Bytes) -> Result<Response, ServiceError> {
    let request: SessionRequest = parse(&body)?;
    let reply = blocking(store, move |s| s.start(request)).await?;
    Ok((StatusCode::CREATED, reply).into_response())
}

async fn list(State(store): State<Arc<SessionStore>>) -> impl IntoResponse {
    Json(store.list())
}

async fn show(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(store, move |s| s.get(&id)).await
}

async fn annotate(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, body: Bytes) -> impl IntoResponse {
    let submission: Submission = match parse(&body) {
        Ok(s) => s,
        Err(e) => return e.into_response(),
    };
    blocking(store, move |s| s.submit(&id, submission)).await.into_response()
}

async fn result(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(store, move |s| s.result(&id)).await
}

async fn trace(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(store, move |s| s.trace(&id)).await
}

/// HTTP routes of the annotation service.
pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(start).get(list))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/result", get(result))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(store)
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
