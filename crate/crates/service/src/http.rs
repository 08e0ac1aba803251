use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::catalog::MedicineRecord;
use crate::engine::{ClassificationResult, Engine, ModelSummary};
use crate::error::{Result, ServiceError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Base64Frame {
    image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: ModelSummary,
    pub lambda: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
    pub class_index: usize,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/v1/classify", post(classify))
        .route("/v1/medicines", get(list_medicines))
        .route("/v1/medicines/{id}", get(get_medicine))
        .route("/v1/health", get(health))
        .with_state(engine)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Frame bytes from either a raw image body or `{"image_b64": ...}`.
fn frame_bytes(headers: &HeaderMap, body: Bytes) -> Result<Vec<u8>> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream");
    let mime = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    if mime == "application/json" {
        let frame: Base64Frame =
            serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("expected {{\"image_b64\": ...}}: {e}")))?;
        return base64::engine::general_purpose::STANDARD
            .decode(frame.image_b64.trim())
            .map_err(|e| ServiceError::BadRequest(format!("image_b64 is not valid base64: {e}")));
    }
    if mime.starts_with("image/") || mime == "application/octet-stream" {
        return Ok(body.to_vec());
    }
    Err(ServiceError::UnsupportedMedia(format!("content type {content_type:?}")))
}

async fn classify(State(engine): State<Arc<Engine>>, headers: HeaderMap, body: Bytes) -> Result<Json<ClassificationResult>> {
    let bytes = frame_bytes(&headers, body)?;
    let result = tokio::task::spawn_blocking(move || engine.classify_frame(&bytes))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(result))
}

async fn list_medicines(State(engine): State<Arc<Engine>>) -> Json<Vec<CatalogEntry>> {
    Json(
        engine
            .catalog()
            .records()
            .iter()
            .map(|r| CatalogEntry {
                id: r.id.clone(),
                name: r.name.clone(),
                class_index: r.class_index,
            })
            .collect(),
    )
}

async fn get_medicine(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Result<Json<MedicineRecord>> {
    engine.get_medicine(&id).cloned().map(Json)
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model: engine.summary(),
        lambda: engine.config().lambda,
        top_k: engine.config().top_k,
    })
}
