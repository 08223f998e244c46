use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use inpaint_core::ColorPalette;

use crate::error::{ServiceError, ServiceResult};
use crate::session::{InpaintService, RefineResponse, SessionDescriptor, SessionState};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    /// Base64 PNG, RGB.
    pub image: String,
    /// Base64 PNG, grayscale; values ≥ 128 mark damaged pixels.
    pub mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineRequest {
    /// Base64 PNG pseudo-color mask painted with palette colors.
    pub semantic_mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub stage1_runs: u64,
}

type Shared = Arc<InpaintService>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ServiceResult<T> + Send + 'static,
) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn create_session(
    State(svc): State<Shared>,
    body: Result<Json<CreateSessionRequest>, axum::extract::rejection::JsonRejection>,
) -> ServiceResult<(StatusCode, Json<SessionDescriptor>)> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let d = blocking(move || svc.create_session(&req.image, &req.mask)).await?;
    Ok((StatusCode::CREATED, Json(d)))
}

async fn refine(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<RefineRequest>, axum::extract::rejection::JsonRejection>,
) -> ServiceResult<Json<RefineResponse>> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(blocking(move || svc.refine(&id, &req.semantic_mask)).await?))
}

async fn get_session(State(svc): State<Shared>, Path(id): Path<String>) -> ServiceResult<Json<SessionState>> {
    Ok(Json(blocking(move || svc.get_session(&id)).await?))
}

async fn palette(State(svc): State<Shared>) -> Json<ColorPalette> {
    Json(svc.palette().clone())
}

async fn healthz(State(svc): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        stage1_runs: svc.stage1_runs(),
    })
}

async fn not_found() -> ServiceError {
    ServiceError::BadRequest("no such endpoint".into())
}

pub fn router(service: Arc<InpaintService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id/refine", post(refine))
        .route("/sessions/:id", get(get_session))
        .route("/palette", get(palette))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .layer(axum::extract::DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<InpaintService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
