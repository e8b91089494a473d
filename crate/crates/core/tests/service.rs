use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use tower::ServiceExt;

use sketchmesh::autodiff::Tensor;
use sketchmesh::geometry::io::{parse_obj, parse_stl};
use sketchmesh::geometry::{check_watertight, Mesh};
use sketchmesh::image::GrayImage;
use sketchmesh::networks::{Model, NetConfig};
use sketchmesh::service::{
    router, ErrorBody, HealthResponse, ModelResponse, MAX_BODY_BYTES, TIMING_HEADER,
};
use sketchmesh::training::{sha256_hex, Checkpoint, InferenceSession, TrainConfig, Trainer};

const RES: usize = 32;

fn fixture_bytes() -> Vec<u8> {
    let cfg = TrainConfig {
        net: NetConfig {
            resolution: RES,
            latent: 8,
            enc_channels: vec![4, 4, 8, 8, 8],
            enc_strides: vec![2, 2, 2, 1, 1],
            dec_hidden: 8,
            sd_channels: vec![4, 4],
            ..NetConfig::default()
        },
        seed: 11,
        ..TrainConfig::default()
    };
    Checkpoint::from_trainer(&Trainer::new(cfg).unwrap()).to_bytes()
}

fn app() -> (Router, String) {
    let bytes = fixture_bytes();
    let s = InferenceSession::from_bytes(&bytes).unwrap();
    (router(Arc::new(s)), sha256_hex(&bytes))
}

fn circle_png(res: usize) -> Vec<u8> {
    let c = res as f64 / 2.0 - 0.5;
    let r = res as f64 * 0.3;
    let px = (0..res * res)
        .map(|i| {
            let (y, x) = ((i / res) as f64, (i % res) as f64);
            let d = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
            if (d - r).abs() < 1.0 {
                0
            } else {
                255
            }
        })
        .collect();
    GrayImage::new(res, res, px).unwrap().encode_png().unwrap()
}

fn blank_png(res: usize, value: u8) -> Vec<u8> {
    GrayImage::new(res, res, vec![value; res * res])
        .unwrap()
        .encode_png()
        .unwrap()
}

fn model_body(png: &[u8], res: Option<usize>) -> String {
    serde_json::json!({ "sketch": BASE64.encode(png), "resolution": res }).to_string()
}

async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    body: impl Into<Body>,
) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    let bytes = to_bytes(body, usize::MAX).await.unwrap().to_vec();
    (parts.status, parts.headers, bytes)
}

async fn infer_circle(app: &Router) -> ModelResponse {
    let (status, _, body) = send(
        app,
        "POST",
        "/api/v1/model",
        model_body(&circle_png(RES), Some(RES)),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn health_reports_checkpoint_id() {
    let (app, id) = app();
    let (status, _, body) = send(&app, "GET", "/api/v1/health", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let h: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.checkpoint_id, id);
}

#[tokio::test]
async fn circle_sketch_gives_watertight_icosphere_topology() {
    let (app, id) = app();
    let (status, headers, body) = send(
        &app,
        "POST",
        "/api/v1/model",
        model_body(&circle_png(RES), Some(RES)),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let ms: f64 = headers[TIMING_HEADER].to_str().unwrap().parse().unwrap();
    assert!(ms >= 0.0);
    let r: ModelResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.vertices.len(), 642);
    assert_eq!(r.faces.len(), 1280);
    assert_eq!(r.checkpoint_id, id);
    let mesh = Mesh::new(r.vertices, r.faces).unwrap();
    assert!(check_watertight(&mesh).unwrap().is_watertight);
    let preview = GrayImage::decode_png(&BASE64.decode(r.silhouette).unwrap()).unwrap();
    assert_eq!((preview.width, preview.height), (RES, RES));
}

#[tokio::test]
async fn identical_requests_get_identical_bodies() {
    let (app, _) = app();
    let req = model_body(&circle_png(RES), None);
    let a = send(&app, "POST", "/api/v1/model", req.clone()).await;
    let b = send(&app, "POST", "/api/v1/model", req).await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a.2, b.2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_requests_agree() {
    let (app, _) = app();
    let req = model_body(&circle_png(RES), None);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (app, req) = (app.clone(), req.clone());
            tokio::spawn(async move { send(&app, "POST", "/api/v1/model", req).await })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    for r in &out {
        assert_eq!(r.0, StatusCode::OK);
        assert_eq!(r.2, out[0].2);
    }
}

#[tokio::test]
async fn larger_sketches_are_resampled() {
    let (app, _) = app();
    let (status, _, body) = send(
        &app,
        "POST",
        "/api/v1/model",
        model_body(&circle_png(96), Some(96)),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let r: ModelResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.vertices.len(), 642);
}

async fn assert_bad_request(app: &Router, uri: &str, body: String) {
    let (status, _, bytes) = send(app, "POST", uri, body).await;
    assert_eq!(
        status,
        StatusCode::BAD_REQUEST,
        "{}",
        String::from_utf8_lossy(&bytes)
    );
    let e: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert!(!e.error.is_empty());
    assert!(e.diagnostic_id.is_none());
}

#[tokio::test]
async fn invalid_sketches_are_rejected() {
    let (app, _) = app();
    let m = "/api/v1/model";
    assert_bad_request(&app, m, model_body(&blank_png(RES, 255), Some(RES))).await;
    assert_bad_request(&app, m, model_body(&blank_png(RES, 128), Some(RES))).await;
    assert_bad_request(&app, m, model_body(b"\x89PNG\r\n\x1a\nbroken", None)).await;
    assert_bad_request(&app, m, model_body(&circle_png(RES), Some(RES + 1))).await;
    let not_square = GrayImage::new(4, 2, vec![0; 8])
        .unwrap()
        .encode_png()
        .unwrap();
    assert_bad_request(&app, m, model_body(&not_square, None)).await;
    assert_bad_request(&app, m, r#"{"sketch": "%%%"}"#.into()).await;
    assert_bad_request(&app, m, "not json".into()).await;
    assert_bad_request(&app, m, "{}".into()).await;
}

#[tokio::test]
async fn oversized_payload_is_413() {
    let (app, _) = app();
    let body = format!(r#"{{"sketch": "{}"}}"#, "A".repeat(MAX_BODY_BYTES + 16));
    let (status, _, bytes) = send(&app, "POST", "/api/v1/model", body).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let e: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert!(e.error.contains("exceeds"));
}

fn export_body(r: &ModelResponse, format: &str) -> String {
    serde_json::json!({ "vertices": r.vertices, "faces": r.faces, "format": format }).to_string()
}

#[tokio::test]
async fn stl_export_length_arithmetic() {
    let (app, _) = app();
    let r = infer_circle(&app).await;
    let (status, headers, bytes) =
        send(&app, "POST", "/api/v1/export", export_body(&r, "stl")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "model/stl");
    assert_eq!(bytes.len(), 84 + 50 * r.faces.len());
    assert_eq!(parse_stl(&bytes).unwrap().len(), 1280);
}

#[tokio::test]
async fn obj_export_reimports_exactly() {
    let (app, _) = app();
    let r = infer_circle(&app).await;
    let (status, headers, bytes) =
        send(&app, "POST", "/api/v1/export", export_body(&r, "obj")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "model/obj");
    assert!(headers["content-disposition"]
        .to_str()
        .unwrap()
        .contains("mesh.obj"));
    let back = parse_obj(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(back.vertices(), &r.vertices[..]);
    assert_eq!(back.faces(), &r.faces[..]);
}

#[tokio::test]
async fn bad_exports_are_rejected() {
    let (app, _) = app();
    let mut r = infer_circle(&app).await;
    assert_bad_request(&app, "/api/v1/export", export_body(&r, "ply")).await;
    r.faces.pop();
    assert_bad_request(&app, "/api/v1/export", export_body(&r, "obj")).await;
    r.faces.push([0, 1, 9999]);
    assert_bad_request(&app, "/api/v1/export", export_body(&r, "stl")).await;
}

#[tokio::test]
async fn internal_failures_carry_a_diagnostic_id() {
    let bytes = fixture_bytes();
    let good = Checkpoint::from_bytes(&bytes).unwrap().model().unwrap();
    let mut params = good.params.clone();
    let name = params
        .names()
        .find(|n| n.starts_with("dec."))
        .unwrap()
        .to_string();
    let t = params.get(&name).unwrap().clone();
    *params.get_mut(&name).unwrap() =
        Tensor::new(t.shape().to_vec(), vec![f32::NAN; t.numel()]).unwrap();
    let broken = Model::from_parts(good.cfg.clone(), params).unwrap();
    let app = router(Arc::new(InferenceSession::from_model(broken, "broken")));
    let (status, _, body) = send(
        &app,
        "POST",
        "/api/v1/model",
        model_body(&circle_png(RES), None),
    )
    .await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    let e: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert!(e.diagnostic_id.is_some_and(|d| !d.is_empty()));
}

#[tokio::test]
async fn unknown_routes_are_404() {
    let (app, _) = app();
    let (status, _, _) = send(&app, "GET", "/api/v2/health", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
