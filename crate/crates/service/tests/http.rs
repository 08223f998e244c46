use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use candle_core::DType;
use inpaint_core::maskgen::center_mask;
use inpaint_core::{synthetic, ColorPalette, InpaintModel, ModelConfig};
use inpaint_service::{encode_b64, router, InpaintService, ServiceConfig};

fn app(dir: &std::path::Path) -> axum::Router {
    let cfg = ModelConfig::desk(16, 16, synthetic::NUM_CLASSES);
    let model = Arc::new(InpaintModel::new(cfg, DType::F32, 5).unwrap());
    let svc = InpaintService::new(model, None, ColorPalette::scenes(), ServiceConfig::new(dir)).unwrap();
    router(Arc::new(svc))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn upload() -> Value {
    let (img, _) = synthetic::scene(16, 16, 1).unwrap();
    let mask = center_mask(16, 16, 8).unwrap();
    json!({
        "image": encode_b64(&img.encode_png().unwrap()),
        "mask": encode_b64(&mask.encode_png().unwrap()),
    })
}

#[tokio::test]
async fn full_loop_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let (s, created) = call(&app, "POST", "/sessions", Some(upload())).await;
    assert_eq!(s, StatusCode::CREATED);
    for key in ["id", "coarse", "semantic_mask", "palette"] {
        assert!(created.get(key).is_some(), "missing {key}");
    }
    let id = created["id"].as_str().unwrap();

    let refine = json!({ "semantic_mask": created["semantic_mask"] });
    let (s, r) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(refine.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["index"], 0);
    let (_, r2) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(refine)).await;
    assert_eq!(r["fine"], r2["fine"]);

    let (s, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state["history"].as_array().unwrap().len(), 2);

    let (s, health) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["stage1_runs"], 1);

    let (s, palette) = call(&app, "GET", "/palette", None).await;
    assert_eq!(s, StatusCode::OK);
    let parsed: ColorPalette = serde_json::from_value(palette).unwrap();
    assert_eq!(parsed, ColorPalette::scenes());
}

#[tokio::test]
async fn errors_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let (s, e) = call(&app, "GET", "/sessions/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "not_found");
    assert!(e["message"].is_string());

    let (s, e) = call(&app, "POST", "/sessions/missing/refine", Some(json!({"semantic_mask": ""}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "not_found");

    let (s, e) = call(&app, "POST", "/sessions", Some(json!({"image": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "bad_request");

    let (s, e) = call(&app, "POST", "/sessions", Some(json!({"image": "aGVsbG8=", "mask": "aGVsbG8="}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "malformed_image");

    let (s, _) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
