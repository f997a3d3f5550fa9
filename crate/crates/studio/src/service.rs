//! JSON-over-HTTP API.
//!
//! Every route except `/v1/health` requires the `x-api-key` header. Errors
//! are returned as `{"code": ..., "message": ...}`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use recipe_core::langmodel::ModelError;
use recipe_core::retrieval::{RetrievalError, SearchQuery};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, GenerateRequest};
use crate::store::{NewGeneration, Store, StoreError};

pub const API_KEY_HEADER: &str = "x-api-key";
pub const DEFAULT_API_KEY_ENV: &str = "RECIPE_STUDIO_API_KEY";
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 100;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub store: Arc<Store>,
    api_key: Arc<str>,
    pub timeout: Duration,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, store: Arc<Store>, api_key: &str) -> Self {
        AppState { engine, store, api_key: api_key.into(), timeout: REQUEST_TIMEOUT }
    }
}

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        log::error!("internal error: {err}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal server error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code.into(), message: self.message })).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Invalid(m) => ApiError::invalid(m),
            EngineError::ModelNotLoaded => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", e.to_string()),
            EngineError::Model(ModelError::SequenceTooLong { .. }) => ApiError::invalid(e.to_string()),
            EngineError::Retrieval(RetrievalError::EmptyQuery) => ApiError::invalid(e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::OutOfRange(_) | StoreError::EmptyComment | StoreError::CommentTooLong | StoreError::ModeMismatch(_) => {
                ApiError::invalid(e.to_string())
            }
            other => ApiError::internal(other),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed request body: {e}")))
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("generation {raw:?} not found")))
}

async fn require_key(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let ok = req.headers().get(API_KEY_HEADER).is_some_and(|v| v.as_bytes() == state.api_key.as_bytes());
    if !ok {
        return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid API key").into_response();
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let guarded = Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/reference", get(reference))
        .route("/v1/generations", post(save_generation).get(list_generations))
        .route("/v1/generations/{id}", get(get_generation))
        .route("/v1/generations/{id}/rating", post(add_rating))
        .route("/v1/generations/{id}/comments", post(add_comment))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_key));
    Router::new().route("/v1/health", get(health)).merge(guarded).with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub corpus_size: usize,
    pub vocab_hash: Option<String>,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let model = state.engine.model.as_ref();
    Json(Health {
        status: "ok".into(),
        model_loaded: model.is_some(),
        corpus_size: state.engine.corpus.len(),
        vocab_hash: model.map(|m| m.header.vocab_hash.clone()),
    })
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: GenerateRequest = parse_body(&body)?;
    state.engine.validate(&req)?;
    let engine = state.engine.clone();
    let task = tokio::task::spawn_blocking(move || engine.generate(&req));
    match tokio::time::timeout(state.timeout, task).await {
        Ok(joined) => Ok(Json(joined.map_err(ApiError::internal)??).into_response()),
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "generation did not finish in time")),
    }
}

async fn reference(State(state): State<AppState>, Query(params): Query<BTreeMap<String, String>>) -> Result<Response, ApiError> {
    if let Some(k) = params.keys().find(|k| !matches!(k.as_str(), "title" | "ingredients" | "instructions")) {
        return Err(ApiError::invalid(format!("unknown query parameter {k:?}")));
    }
    let pick = |k: &str| params.get(k).filter(|v| !v.trim().is_empty()).cloned();
    let query = SearchQuery { title: pick("title"), ingredients: pick("ingredients"), instructions: pick("instructions") };
    match state.engine.reference(&query) {
        Ok(Some(hit)) => Ok(Json(hit).into_response()),
        Ok(None) => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", "no recipe matches the query")),
        Err(RetrievalError::EmptyQuery) => Err(ApiError::invalid("query has no searchable terms")),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn save_generation(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let g: NewGeneration = parse_body(&body)?;
    let store = state.store.clone();
    let saved = tokio::task::spawn_blocking(move || store.save_generation(g)).await.map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(saved)).into_response())
}

fn page_param(params: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize, ApiError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.parse().ok().filter(|&n| n >= 1).ok_or_else(|| ApiError::invalid(format!("{key} must be a positive integer"))),
    }
}

async fn list_generations(State(state): State<AppState>, Query(params): Query<BTreeMap<String, String>>) -> Result<Response, ApiError> {
    let page = page_param(&params, "page", 1)?;
    let page_size = page_param(&params, "page_size", DEFAULT_PAGE_SIZE)?;
    if page_size > MAX_PAGE_SIZE {
        return Err(ApiError::invalid(format!("page_size must be at most {MAX_PAGE_SIZE}")));
    }
    Ok(Json(state.store.list(page, page_size)).into_response())
}

async fn get_generation(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.store.get(parse_id(&id)?)?).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingBody {
    pub value: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentBody {
    pub text: String,
}

async fn add_rating(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let b: RatingBody = parse_body(&body)?;
    let store = state.store.clone();
    let r = tokio::task::spawn_blocking(move || store.add_rating(id, b.value)).await.map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(r)).into_response())
}

async fn add_comment(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let b: CommentBody = parse_body(&body)?;
    let store = state.store.clone();
    let c = tokio::task::spawn_blocking(move || store.add_comment(id, &b.text)).await.map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(c)).into_response())
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
