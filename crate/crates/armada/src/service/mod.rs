//! HTTP API.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/campaigns` | create |
//! | GET | `/campaigns` | list ids |
//! | POST | `/campaigns/{id}/events` | ingest JSONL |
//! | GET | `/campaigns/{id}/allocation` | published allocation |
//! | POST | `/campaigns/{id}/assign` | pick an arm |
//! | POST | `/campaigns/{id}/batch` | run the mini-batch now |
//! | POST | `/campaigns/{id}/arms` | add an arm |
//! | POST, DELETE | `/campaigns/{id}/arms/{arm}/blacklist` | blacklist, restore |
//! | PUT | `/campaigns/{id}/floor-schedule` | replace the floor schedule |
//! | GET | `/campaigns/{id}/history` | per-epoch monitoring feed |
//!
//! Errors are `{"code", "message", "detail"}` with `code` one of
//! `not_found`, `conflict`, `invalid`, `infeasible`, `internal`.

mod engine;
mod error;

use std::net::SocketAddr;
use std::sync::Arc;

use armada_core::FloorSchedule;
use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub use engine::{
    history_from_journal, AdminHistory, AllocationView, AssignRequest, Assignment, BatchReport, CampaignHandle,
    CreateCampaign, Engine, EpochHistory, History, IngestReport, PosteriorSummary, WeightBoundary,
};
pub use error::{ApiError, ErrorCode};

use crate::config::ServiceConfig;

type AppState = Arc<Engine>;
type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create(State(engine): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateCampaign = parse(&body)?;
    let view = blocking(move || engine.create(req)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list(State(engine): State<AppState>) -> Json<Vec<String>> {
    Json(engine.campaign_ids())
}

async fn ingest(State(engine): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Json<IngestReport>> {
    blocking(move || engine.ingest(&id, &body)).await.map(Json)
}

async fn allocation(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AllocationView>> {
    engine.allocation(&id).map(Json)
}

async fn assign(State(engine): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Assignment>> {
    let req: AssignRequest = parse(&body)?;
    if req.record {
        blocking(move || engine.assign(&id, &req)).await.map(Json)
    } else {
        engine.assign(&id, &req).map(Json)
    }
}

async fn batch(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BatchReport>> {
    blocking(move || engine.batch(&id)).await.map(Json)
}

#[derive(Deserialize)]
struct AddArm {
    arm: String,
}

async fn add_arm(State(engine): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: AddArm = parse(&body)?;
    let view = blocking(move || engine.add_arm(&id, &req.arm)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn blacklist(
    State(engine): State<AppState>,
    Path((id, arm)): Path<(String, String)>,
) -> ApiResult<Json<AllocationView>> {
    blocking(move || engine.blacklist(&id, &arm, true)).await.map(Json)
}

async fn unblacklist(
    State(engine): State<AppState>,
    Path((id, arm)): Path<(String, String)>,
) -> ApiResult<Json<AllocationView>> {
    blocking(move || engine.blacklist(&id, &arm, false)).await.map(Json)
}

async fn floor_schedule(
    State(engine): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AllocationView>> {
    let schedule: FloorSchedule = parse(&body)?;
    schedule.validate()?;
    blocking(move || engine.set_floor_schedule(&id, schedule)).await.map(Json)
}

async fn history(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<History>> {
    blocking(move || engine.history(&id)).await.map(Json)
}

async fn health() -> &'static str {
    "ok"
}

async fn require_token(State(engine): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &engine.config().api_token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) && req.method() != axum::http::Method::OPTIONS {
            let mut resp = ApiError::invalid("missing or wrong API token").into_response();
            *resp.status_mut() = StatusCode::UNAUTHORIZED;
            return resp;
        }
    }
    next.run(req).await
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/campaigns", post(create).get(list))
        .route("/campaigns/{id}/events", post(ingest))
        .route("/campaigns/{id}/allocation", get(allocation))
        .route("/campaigns/{id}/assign", post(assign))
        .route("/campaigns/{id}/batch", post(batch))
        .route("/campaigns/{id}/arms", post(add_arm))
        .route("/campaigns/{id}/arms/{arm}/blacklist", post(blacklist).delete(unblacklist))
        .route("/campaigns/{id}/floor-schedule", put(floor_schedule))
        .route("/campaigns/{id}/history", get(history))
        .fallback(fallback)
        .route_layer(middleware::from_fn_with_state(engine.clone(), require_token))
        .route("/health", get(health))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(engine)
}

/// Runs scheduled batches for every campaign until the task is dropped.
pub async fn run_scheduler(engine: Arc<Engine>) {
    loop {
        let Some(delay) = engine.config().batch_schedule.next_delay(Utc::now()) else { return };
        tokio::time::sleep(delay).await;
        for id in engine.campaign_ids() {
            let e = engine.clone();
            let label = id.clone();
            match blocking(move || e.batch(&id)).await {
                Ok(r) => tracing::info!(campaign = %label, epoch = r.epoch, unchanged = r.unchanged, "scheduled batch"),
                Err(err) => tracing::warn!(campaign = %label, error = %err, "scheduled batch failed"),
            }
        }
    }
}

/// Serves the API until ctrl-c.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bind address: {e}")))?;
    let engine = Arc::new(Engine::open(config).map_err(|e| std::io::Error::other(e.to_string()))?);
    let scheduler = tokio::spawn(run_scheduler(engine.clone()));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    scheduler.abort();
    Ok(())
}
