use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Result;
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use emomem_core::{
    DistanceMetric, Engine, Error, MemoryUnit, ProfileCatalog, RetrievalStrategy, ScoredFragment, StrategyKind,
};
use serde::{Deserialize, Serialize};

use crate::commands::Context;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub catalog: Arc<ProfileCatalog>,
    /// Keyed by character id; characters without a memory file are absent.
    pub units: Arc<HashMap<String, Arc<MemoryUnit>>>,
}

impl AppState {
    pub fn new(engine: Engine, catalog: ProfileCatalog, units: HashMap<String, MemoryUnit>) -> Self {
        Self {
            engine: Arc::new(engine),
            catalog: Arc::new(catalog),
            units: Arc::new(units.into_iter().map(|(k, v)| (k, Arc::new(v))).collect()),
        }
    }

    /// Loads every profiled character's memory file that exists.
    pub fn load(ctx: &Context) -> Result<Self> {
        let catalog = ctx.catalog()?;
        let mut units = HashMap::new();
        for p in catalog.profiles() {
            let path = ctx.memory_file(&p.character_id, None)?;
            if path.exists() {
                units.insert(p.character_id.clone(), emomem_core::memory_store::load_memory(&path)?);
            } else {
                tracing::warn!(character = %p.character_id, "no memory file; character will return 404");
            }
        }
        Ok(Self::new(ctx.engine()?, catalog, units))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/characters", get(characters))
        .route("/retrieve", post(retrieve))
        .route("/chat", post(chat))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::InvalidInput(_) | Error::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            Error::UnknownCharacter(_) => (StatusCode::NOT_FOUND, "unknown_character"),
            Error::UncachedVector(_) => (StatusCode::CONFLICT, "uncached_vectors"),
            e if e.is_backend() => (StatusCode::SERVICE_UNAVAILABLE, "backend"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    kind: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                kind: self.kind,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

/// Body of `/retrieve` and `/chat`. Absent retrieval fields use the server
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub character_id: String,
    pub query: String,
    pub strategy: Option<StrategyKind>,
    pub k: Option<usize>,
    pub pool_size: Option<usize>,
    pub weight: Option<f64>,
    pub epsilon: Option<f64>,
    pub metric: Option<DistanceMetric>,
    pub normalize: Option<bool>,
}

impl QueryRequest {
    fn resolve(&self, engine: &Engine) -> (RetrievalStrategy, usize) {
        let mut s = *engine.default_strategy();
        if let Some(kind) = self.strategy {
            s.kind = kind;
        }
        if self.pool_size.is_some() {
            s.pool_size = self.pool_size;
        }
        s.weight = self.weight.unwrap_or(s.weight);
        s.epsilon = self.epsilon.unwrap_or(s.epsilon);
        s.metric = self.metric.unwrap_or(s.metric);
        s.normalize = self.normalize.unwrap_or(s.normalize);
        (s, self.k.unwrap_or(engine.default_k()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub results: Vec<ScoredFragment>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: String,
    pub used_fragment_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CharacterSummary {
    pub character_id: String,
    pub name: String,
    pub fragments: usize,
    pub uncached: usize,
}

fn unit(state: &AppState, id: &str) -> Result<Arc<MemoryUnit>, ApiError> {
    state
        .units
        .get(id)
        .cloned()
        .ok_or_else(|| Error::UnknownCharacter(id.to_owned()).into())
}

async fn characters(State(state): State<AppState>) -> Json<Vec<CharacterSummary>> {
    let list = state
        .catalog
        .profiles()
        .iter()
        .filter_map(|p| {
            let u = state.units.get(&p.character_id)?;
            Some(CharacterSummary {
                character_id: p.character_id.clone(),
                name: p.name.clone(),
                fragments: u.len(),
                uncached: u.uncached_ids().len(),
            })
        })
        .collect();
    Json(list)
}

async fn retrieve(
    State(state): State<AppState>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<RetrieveResponse>, ApiError> {
    let Json(req) = body?;
    let unit = unit(&state, &req.character_id)?;
    let (s, k) = req.resolve(&state.engine);
    let results = state.engine.retrieve(&unit, &req.query, &s, k).await?;
    Ok(Json(RetrieveResponse { results }))
}

async fn chat(
    State(state): State<AppState>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<ChatResponse>, ApiError> {
    let Json(req) = body?;
    let unit = unit(&state, &req.character_id)?;
    let profile = state
        .catalog
        .get(&req.character_id)
        .ok_or_else(|| ApiError::from(Error::UnknownCharacter(req.character_id.clone())))?;
    let (s, k) = req.resolve(&state.engine);
    let r = state.engine.respond(profile, &unit, &req.query, &s, k).await?;
    Ok(Json(ChatResponse {
        reply: r.reply,
        used_fragment_ids: r.retrieved.into_iter().map(|s| s.fragment_id).collect(),
    }))
}
