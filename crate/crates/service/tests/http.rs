mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine as _;
use common::*;
use http_body_util::BodyExt;
use medbox_service::*;
use serde_json::Value;
use tower::ServiceExt;

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(content_type: &str, body: Vec<u8>) -> Request<Body> {
    Request::post("/v1/classify").header("content-type", content_type).body(Body::from(body)).unwrap()
}

fn app(lambda: f64) -> axum::Router {
    router(Arc::new(engine(lambda)))
}

#[tokio::test]
async fn health_reports_model_and_lambda() {
    let (status, body) = call(&app(0.85), get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["lambda"], 0.85);
    assert_eq!(body["model"]["growth_rate"], 4);
    assert_eq!(body["model"]["compression"], 0.5);
    assert_eq!(body["model"]["classes"], CLASSES);
}

#[tokio::test]
async fn medicine_records_round_trip() {
    let app = app(0.85);
    let (status, list) = call(&app, get("/v1/medicines")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), CLASSES);
    assert_eq!(list[1]["id"], "med-1");

    let (status, rec) = call(&app, get("/v1/medicines/med-3")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec, serde_json::to_value(&records(CLASSES)[3]).unwrap());
    assert_eq!(rec["pil"]["warnings"], "warnings 3");

    let (status, err) = call(&app, get("/v1/medicines/unknown")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"]["code"], "not_found");
}

#[tokio::test]
async fn classify_accepts_raw_and_base64() {
    let app = app(0.0);
    let frame = frames()[7].clone();
    let (status, raw) = call(&app, post("image/png", frame.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(raw["status"], "recognized");
    assert_eq!(raw["medicine"]["id"], raw["top"][0]["class_id"]);
    assert!(raw["latency_ms"].as_f64().unwrap() > 0.0);

    let b64 = base64::engine::general_purpose::STANDARD.encode(&frame);
    let body = serde_json::to_vec(&serde_json::json!({ "image_b64": b64 })).unwrap();
    let (status, via_json) = call(&app, post("application/json", body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(via_json["top"], raw["top"]);
    assert_eq!(via_json["medicine"], raw["medicine"]);
}

#[tokio::test]
async fn below_threshold_response_shape() {
    let (status, body) = call(&app(1.0), post("image/png", frames()[0].clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "below_threshold");
    assert!(body["medicine"].is_null());
    assert_eq!(body["suppressed"], true);
    assert!(!body["top"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn non_images_are_refused() {
    let app = app(0.85);
    let (status, body) = call(&app, post("text/plain", b"hello".to_vec())).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert_eq!(body["error"]["code"], "unsupported_media_type");
    let (status, _) = call(&app, post("application/octet-stream", b"a text file\n".to_vec())).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _) = call(&app, post("application/json", br#"{"image_b64": "%%%"}"#.to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, post("application/json", br#"{"other": 1}"#.to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_serial() {
    let app = app(0.3);
    let fs = frames();
    let mut serial = Vec::new();
    for f in &fs {
        serial.push(call(&app, post("image/png", f.clone())).await.1);
    }
    let tasks: Vec<_> = (0..50)
        .map(|i| {
            let (app, frame) = (app.clone(), fs[i % fs.len()].clone());
            tokio::spawn(async move { (i, call(&app, post("image/png", frame)).await) })
        })
        .collect();
    for t in tasks {
        let (i, (status, body)) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        let want = &serial[i % fs.len()];
        for key in ["status", "top", "medicine", "suppressed", "lambda"] {
            assert_eq!(body[key], want[key], "request {i}, field {key}");
        }
    }
}

#[tokio::test]
async fn confidences_survive_json_exactly() {
    let engine = Arc::new(engine(0.3));
    let app = router(engine.clone());
    for f in frames() {
        let direct = engine.classify_frame(&f).unwrap();
        let resp = app.clone().oneshot(post("image/png", f)).await.unwrap();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let decoded: ClassificationResult = serde_json::from_slice(&bytes).unwrap();
        assert!(decoded.same_outcome(&direct), "{decoded:?} vs {direct:?}");
    }
}

#[tokio::test]
async fn serve_binds_a_real_socket() {
    let engine = Arc::new(engine(0.85));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let server = tokio::spawn(serve(engine.clone(), addr));
    let mut body = String::new();
    for _ in 0..50 {
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        if let Ok(mut s) = tokio::net::TcpStream::connect(addr).await {
            use tokio::io::{AsyncReadExt, AsyncWriteExt};
            s.write_all(b"GET /v1/health HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n").await.unwrap();
            s.read_to_string(&mut body).await.unwrap();
            break;
        }
    }
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    // a second bind on the same port fails
    assert!(serve(engine, addr).await.is_err());
    server.abort();
}
