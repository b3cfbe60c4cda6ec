//! JSON-over-HTTP front end for a [`Registry`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gmi_core::{
    deserialize_spec_any, serialize_spec, RankedEntry, Requirement, ScoringStrategy, DEFAULT_GAMMA,
};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::RegistryError;
use crate::store::{Registry, SubmitMode, Submitted};

/// Body of `POST /v1/identify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyRequest {
    pub requirement: Requirement,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyResponse {
    pub strategy: String,
    pub gamma: f64,
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Default, Deserialize)]
struct SubmitParams {
    #[serde(default)]
    replace: bool,
}

struct ApiError(StatusCode, String);

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::NotFound(_) => StatusCode::NOT_FOUND,
            RegistryError::Duplicate(_) | RegistryError::Empty => StatusCode::CONFLICT,
            RegistryError::Invalid(_) | RegistryError::SchemaMismatch { .. } => StatusCode::BAD_REQUEST,
            RegistryError::Io(_) | RegistryError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<gmi_core::Error> for ApiError {
    fn from(e: gmi_core::Error) -> Self {
        RegistryError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/models", post(submit).get(list))
        .route("/v1/models/{id}", get(fetch).delete(remove))
        .route("/v1/identify", post(identify))
        .with_state(registry)
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    registry: Arc<Registry>,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry)).with_graceful_shutdown(shutdown).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn submit(
    State(reg): State<Arc<Registry>>,
    Query(params): Query<SubmitParams>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Submitted>)> {
    let spec = deserialize_spec_any(&body)?;
    let mode = if params.replace { SubmitMode::Replace } else { SubmitMode::New };
    let done = blocking(move || Ok(reg.submit(spec, mode)?)).await?;
    Ok((StatusCode::CREATED, Json(done)))
}

async fn list(State(reg): State<Arc<Registry>>) -> Response {
    Json(reg.list()).into_response()
}

async fn fetch(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let spec = reg.get(&id)?;
    Ok(([("content-type", "application/json")], serialize_spec(&spec)).into_response())
}

async fn remove(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(move || Ok(reg.remove(&id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn identify(State(reg): State<Arc<Registry>>, body: Bytes) -> ApiResult<Json<IdentifyResponse>> {
    let req: IdentifyRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid identify request: {e}")))?;
    let gamma = req.gamma.unwrap_or(DEFAULT_GAMMA);
    let strategy = ScoringStrategy::parse(&req.strategy, gamma)?;
    let ranking = blocking(move || Ok(reg.identify(&req.requirement, &strategy, req.k)?)).await?;
    Ok(Json(IdentifyResponse {
        strategy: ranking.strategy.kind.name().to_string(),
        gamma,
        entries: ranking.entries,
    }))
}
