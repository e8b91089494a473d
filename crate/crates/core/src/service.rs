//! HTTP inference service.
//!
//! * `GET  /api/v1/health` returns `{"status":"ok","checkpoint_id":...}`.
//! * `POST /api/v1/model` takes `{"sketch": <base64 PNG>, "resolution": n}` and
//!   returns a [`ModelResponse`]. Inference wall-clock time is sent in the
//!   `X-Inference-Time-Ms` header so identical requests get identical bodies.
//! * `POST /api/v1/export` takes `{"vertices", "faces", "format": "obj"|"stl"}`
//!   and returns the file.
//!
//! Bad input is answered with 400, bodies over 1 MiB with 413 and internal
//! failures with 500 plus a diagnostic id that is also logged to stderr.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, SketchImage};
use crate::geometry::io::{export_mesh, MeshFormat};
use crate::geometry::{check_watertight, Mesh};
use crate::image::GrayImage;
use crate::render::{canonical_pose, render_mask};
use crate::training::{InferenceSession, TrainError};

pub const MAX_BODY_BYTES: usize = 1 << 20;
pub const TIMING_HEADER: &str = "x-inference-time-ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub sketch: String,
    #[serde(default)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// Canonical-view silhouette of the mesh, base64 PNG.
    pub silhouette: String,
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_id: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    TooLarge,
    Internal(String),
}

fn diagnostic_id() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let t = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    format!("{t:x}-{n:04x}")
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: m,
                    diagnostic_id: None,
                },
            ),
            ApiError::TooLarge => (
                StatusCode::PAYLOAD_TOO_LARGE,
                ErrorBody {
                    error: format!("request body exceeds {MAX_BODY_BYTES} bytes"),
                    diagnostic_id: None,
                },
            ),
            ApiError::Internal(m) => {
                let id = diagnostic_id();
                eprintln!("internal error [{id}]: {m}");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    ErrorBody {
                        error: "internal error".into(),
                        diagnostic_id: Some(id),
                    },
                )
            }
        };
        (status, Json(body)).into_response()
    }
}

fn is_client_error(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Data(
            DataError::EmptySketch
                | DataError::NonBinary
                | DataError::InvalidSketch(_)
                | DataError::Image(_)
        )
    )
}

impl From<TrainError> for ApiError {
    fn from(e: TrainError) -> Self {
        if is_client_error(&e) {
            ApiError::BadRequest(e.to_string())
        } else {
            ApiError::Internal(e.to_string())
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid JSON: {e}")))
}

/// Decodes and validates the sketch of a model request.
pub fn decode_sketch(req: &ModelRequest, model_res: usize) -> Result<SketchImage, ApiError> {
    let png = BASE64
        .decode(req.sketch.trim())
        .map_err(|e| ApiError::BadRequest(format!("sketch is not base64: {e}")))?;
    let img = GrayImage::decode_png(&png)
        .map_err(|e| ApiError::BadRequest(format!("malformed PNG: {e}")))?;
    if img.width != img.height {
        return Err(ApiError::BadRequest(format!(
            "sketch must be square, got {}x{}",
            img.width, img.height
        )));
    }
    if let Some(r) = req.resolution {
        if r != img.width {
            return Err(ApiError::BadRequest(format!(
                "resolution {r} does not match the {}x{} image",
                img.width, img.height
            )));
        }
    }
    let sketch = SketchImage::from_binary_image(&img, model_res).map_err(|e| match e {
        DataError::NonBinary => {
            ApiError::BadRequest("sketch must be binary (pixels 0 or 255)".into())
        }
        e => ApiError::BadRequest(e.to_string()),
    })?;
    if sketch.stroke_count() == 0 {
        return Err(ApiError::BadRequest("sketch has no stroke pixels".into()));
    }
    Ok(sketch)
}

pub fn mesh_arrays(mesh: &Mesh) -> (Vec<[f32; 3]>, Vec<[u32; 3]>) {
    (mesh.vertices().to_vec(), mesh.faces().to_vec())
}

async fn health(State(s): State<Arc<InferenceSession>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        checkpoint_id: s.checkpoint_id().to_string(),
    })
}

async fn model(State(s): State<Arc<InferenceSession>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ModelRequest = parse_json(&body)?;
    let sketch = decode_sketch(&req, s.resolution())?;
    let (resp, ms) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let out = s.infer(&sketch)?;
        let mask = render_mask(&out.mesh, canonical_pose(), s.resolution())
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let png = mask
            .to_png()
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let (vertices, faces) = mesh_arrays(&out.mesh);
        let resp = ModelResponse {
            vertices,
            faces,
            silhouette: BASE64.encode(png),
            checkpoint_id: s.checkpoint_id().to_string(),
        };
        Ok((resp, out.elapsed.as_secs_f64() * 1e3))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let mut r = Json(resp).into_response();
    let v = HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii number");
    r.headers_mut().insert(TIMING_HEADER, v);
    Ok(r)
}

async fn export(body: Bytes) -> Result<Response, ApiError> {
    let req: ExportRequest = parse_json(&body)?;
    let format: MeshFormat = req
        .format
        .parse()
        .map_err(|e: crate::geometry::GeometryError| ApiError::BadRequest(e.to_string()))?;
    let mesh =
        Mesh::new(req.vertices, req.faces).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let report = check_watertight(&mesh).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if !report.is_watertight {
        return Err(ApiError::BadRequest(format!(
            "mesh is not watertight ({} bad edges)",
            report.bad_edges.len()
        )));
    }
    let bytes = export_mesh(&mesh, format).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let disposition = format!("attachment; filename=\"mesh.{}\"", format.extension());
    Ok((
        [
            (header::CONTENT_TYPE, format.content_type().to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

/// Maps axum's body-limit rejection to 413; the handlers read raw bytes so
/// no other extractor rejection can occur.
async fn limit_to_413(req: axum::extract::Request, next: axum::middleware::Next) -> Response {
    let resp = next.run(req).await;
    if resp.status() == StatusCode::PAYLOAD_TOO_LARGE {
        return ApiError::TooLarge.into_response();
    }
    resp
}

pub fn router(session: Arc<InferenceSession>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/model", post(model))
        .route("/api/v1/export", post(export))
        .layer(axum::middleware::from_fn(limit_to_413))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(session)
}

pub async fn serve(session: Arc<InferenceSession>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "serving checkpoint {} on http://{}",
        session.checkpoint_id(),
        listener.local_addr()?
    );
    axum::serve(listener, router(session)).await
}
