use std::io::Read;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::Value;
use tonefit::imageio::{decode_png, encode_png};
use tonefit::preset::{decode_preset, PresetManifest};
use tonefit::synthetic::smooth_image;
use tonefit::{BitDepth, Image};
use tonefit_service::{router, SessionStore, MAX_BODY_BYTES, SESSION_TTL};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

fn app() -> Router {
    router(Arc::new(SessionStore::new(SESSION_TTL)), None).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> Reply {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn source() -> Image {
    smooth_image(16, 16, 3)
}

async fn upload(app: &Router, image: &Image, depth: BitDepth) -> String {
    let r = call(app, "POST", "/api/sessions", encode_png(image, depth).unwrap()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let v = r.json();
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(image.width() as u64), Some(image.height() as u64)));
    v["session_id"].as_str().unwrap().to_string()
}

async fn wait_done(app: &Router, id: &str) -> Value {
    let mut last = 0.0;
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let v = call(app, "GET", &format!("/api/sessions/{id}/fit/status"), Body::empty()).await.json();
        let progress = v["progress"].as_f64().unwrap();
        assert!(progress >= last, "progress went backwards");
        last = progress;
        match v["state"].as_str().unwrap() {
            "running" => {}
            _ => return v,
        }
        assert!(Instant::now() < deadline, "fit did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// A completed fit against the image itself as reference.
async fn fitted_session(app: &Router, body: &str) -> String {
    let img = source();
    let id = upload(app, &img, BitDepth::Eight).await;
    let r = call(app, "POST", &format!("/api/sessions/{id}/fit"), body.to_string()).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["job"], "started");
    let v = wait_done(app, &id).await;
    assert_eq!(v["state"], "done", "{v}");
    assert_eq!(v["progress"], 1.0);
    id
}

fn reference_body(steps: usize, image: &Image) -> String {
    let png = encode_png(image, BitDepth::Sixteen).unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
    format!(r#"{{"steps": {steps}, "reference": "{b64}"}}"#)
}

#[tokio::test]
async fn upload_accepts_png_and_rejects_garbage() {
    let app = app();
    upload(&app, &source(), BitDepth::Eight).await;
    upload(&app, &source(), BitDepth::Sixteen).await;
    assert_eq!(call(&app, "POST", "/api/sessions", Body::empty()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/sessions", "not a png").await.status, StatusCode::BAD_REQUEST);
    let huge = vec![0u8; MAX_BODY_BYTES + 1];
    assert_eq!(call(&app, "POST", "/api/sessions", huge).await.status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let app = app();
    for (method, path) in [
        ("GET", "fit/status"),
        ("POST", "fit"),
        ("GET", "preview"),
        ("GET", "solutions/0"),
        ("GET", "curves"),
        ("GET", "export"),
    ] {
        let r = call(&app, method, &format!("/api/sessions/nope/{path}"), Body::empty()).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{method} {path}");
    }
}

#[tokio::test]
async fn results_require_a_completed_fit() {
    let app = app();
    let id = upload(&app, &source(), BitDepth::Eight).await;
    let status = call(&app, "GET", &format!("/api/sessions/{id}/fit/status"), Body::empty()).await.json();
    assert_eq!(status["state"], "idle");
    for path in ["preview", "solutions/0", "curves", "export"] {
        let r = call(&app, "GET", &format!("/api/sessions/{id}/{path}"), Body::empty()).await;
        assert_eq!(r.status, StatusCode::CONFLICT, "{path}");
    }
    let r = call(&app, "PUT", &format!("/api/sessions/{id}/curves"), "{}").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn fit_validation_and_double_start() {
    let app = app();
    let id = upload(&app, &source(), BitDepth::Eight).await;
    let fit = format!("/api/sessions/{id}/fit");
    assert_eq!(call(&app, "POST", &fit, r#"{"steps": 0}"#).await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &fit, r#"{"bogus": 1}"#).await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &fit, "{").await.status, StatusCode::BAD_REQUEST);
    let wrong = reference_body(10, &smooth_image(8, 8, 0));
    assert_eq!(call(&app, "POST", &fit, wrong).await.status, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(call(&app, "POST", &fit, r#"{"steps": 4000}"#).await.status, StatusCode::ACCEPTED);
    assert_eq!(call(&app, "POST", &fit, r#"{"steps": 10}"#).await.status, StatusCode::CONFLICT);
    let v = wait_done(&app, &id).await;
    assert_eq!(v["state"], "done");
    assert!(v["loss"].as_f64().unwrap().is_finite());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn identity_reference_fit_is_near_exact() {
    let app = app();
    let img = source();
    let id = upload(&app, &img, BitDepth::Eight).await;
    let r = call(&app, "POST", &format!("/api/sessions/{id}/fit"), reference_body(100, &decode_png(&encode_png(&img, BitDepth::Eight).unwrap()).unwrap())).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let status = wait_done(&app, &id).await;
    assert_eq!(status["state"], "done");
    // The fused output must reproduce the reference; single curves carry
    // their symmetry-breaking offsets and need not be the identity.
    let psnr = status["psnr"].as_f64().unwrap_or(f64::INFINITY);
    assert!(psnr > 40.0, "psnr {psnr}");
    for i in 0..3 {
        let r = call(&app, "GET", &format!("/api/sessions/{id}/solutions/{i}"), Body::empty()).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.headers[header::CONTENT_TYPE], "image/png");
        assert_eq!(decode_png(&r.body).unwrap().dims(), img.dims());
    }
    let r = call(&app, "GET", &format!("/api/sessions/{id}/solutions/3"), Body::empty()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn previews_are_homogeneous_and_validated() {
    let app = app();
    let id = fitted_session(&app, r#"{"steps": 60}"#).await;
    let get = |w: &str| format!("/api/sessions/{id}/preview?weights={w}");
    let a = call(&app, "GET", &get("1,1,1"), Body::empty()).await;
    let b = call(&app, "GET", &get("3,3,3"), Body::empty()).await;
    let again = call(&app, "GET", &get("1,1,1"), Body::empty()).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.body, b.body);
    assert_eq!(a.body, again.body);
    let plain = call(&app, "GET", &format!("/api/sessions/{id}/preview"), Body::empty()).await;
    assert_eq!(plain.body, a.body);
    assert_eq!(call(&app, "GET", &get("2,0.01,0.1"), Body::empty()).await.status, StatusCode::OK);
    for bad in ["1,0,1", "1,1", "1,-2,1", "a,b,c"] {
        assert_eq!(call(&app, "GET", &get(bad), Body::empty()).await.status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn plain_mode_fit_has_no_interpolation() {
    let app = app();
    let id = fitted_session(&app, r#"{"steps": 20, "fusion_mode": "plain"}"#).await;
    let r = call(&app, "GET", &format!("/api/sessions/{id}/preview?weights=1,1,1"), Body::empty()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(String::from_utf8_lossy(&r.body).contains("interpolation requires constrained mode"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn curve_editing_round_trip_and_validation() {
    let app = app();
    let id = fitted_session(&app, r#"{"steps": 60}"#).await;
    let curves = format!("/api/sessions/{id}/curves");
    let preview = format!("/api/sessions/{id}/preview?weights=2,0.5,1");
    let got = call(&app, "GET", &curves, Body::empty()).await;
    assert_eq!(got.status, StatusCode::OK);
    let manifest = PresetManifest::parse(std::str::from_utf8(&got.body).unwrap()).unwrap();
    assert_eq!(manifest.curves.len() * 3, 9);
    let before = call(&app, "GET", &preview, Body::empty()).await.body;

    let r = call(&app, "PUT", &curves, got.body.clone()).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &preview, Body::empty()).await.body, before);

    let mut bad = manifest.clone();
    bad.curves[1][2].alphas[3] = 1.5;
    let r = call(&app, "PUT", &curves, bad.to_json()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["error"].as_str().unwrap().contains("curves[1][2]"));

    let mut short = manifest.clone();
    short.curves[0][0].knots.pop();
    assert_eq!(call(&app, "PUT", &curves, short.to_json()).await.status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut edited = manifest.clone();
    for triple in &mut edited.curves {
        for c in triple.iter_mut() {
            c.alphas.iter_mut().for_each(|a| *a = 0.9);
        }
    }
    assert_eq!(call(&app, "PUT", &curves, edited.to_json()).await.status, StatusCode::NO_CONTENT);
    assert_ne!(call(&app, "GET", &preview, Body::empty()).await.body, before);
    let now = call(&app, "GET", &curves, Body::empty()).await;
    let now = PresetManifest::parse(std::str::from_utf8(&now.body).unwrap()).unwrap();
    assert_eq!(now.curves, edited.curves);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn export_unzips_to_a_loadable_preset() {
    let app = app();
    let id = fitted_session(&app, r#"{"steps": 40}"#).await;
    let r = call(&app, "GET", &format!("/api/sessions/{id}/export"), Body::empty()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "application/zip");
    let mut archive = zip::ZipArchive::new(std::io::Cursor::new(r.body)).unwrap();
    let mut read = |name: &str| -> tonefit::Result<Vec<u8>> {
        let mut f = archive
            .by_name(name)
            .map_err(|_| tonefit::Error::MissingSidecar(name.into()))?;
        let mut out = Vec::new();
        f.read_to_end(&mut out).unwrap();
        Ok(out)
    };
    let manifest = PresetManifest::parse(&String::from_utf8(read("preset.json").unwrap()).unwrap()).unwrap();
    let set = decode_preset(&manifest, read).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.map_dims(), Some((16, 16)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_are_isolated_under_interleaving() {
    let app = app();
    let a = upload(&app, &source(), BitDepth::Eight).await;
    let b = upload(&app, &smooth_image(12, 10, 9), BitDepth::Eight).await;
    let (fit_a, fit_b) = (format!("/api/sessions/{a}/fit"), format!("/api/sessions/{b}/fit"));
    let status_b = format!("/api/sessions/{b}/fit/status");
    let start_a = call(&app, "POST", &fit_a, r#"{"steps": 200}"#);
    let status_b = call(&app, "GET", &status_b, Body::empty());
    let (ra, rb) = tokio::join!(start_a, status_b);
    assert_eq!(ra.status, StatusCode::ACCEPTED);
    assert_eq!(rb.json()["state"], "idle");
    let start_b = call(&app, "POST", &fit_b, r#"{"steps": 30, "solutions": 2}"#);
    let (rb, _) = tokio::join!(start_b, wait_done(&app, &a));
    assert_eq!(rb.status, StatusCode::ACCEPTED);
    wait_done(&app, &b).await;
    let ma = call(&app, "GET", &format!("/api/sessions/{a}/curves"), Body::empty()).await.json();
    let mb = call(&app, "GET", &format!("/api/sessions/{b}/curves"), Body::empty()).await.json();
    assert_eq!((ma["n_solutions"].as_u64(), mb["n_solutions"].as_u64()), (Some(3), Some(2)));
    let pa = call(&app, "GET", &format!("/api/sessions/{a}/solutions/0"), Body::empty()).await;
    assert_eq!(decode_png(&pa.body).unwrap().dims(), (16, 16));
}

#[tokio::test]
async fn cors_allows_configured_origin() {
    let app = router(Arc::new(SessionStore::new(SESSION_TTL)), Some("http://localhost:5173")).unwrap();
    let req = Request::builder()
        .method("GET")
        .uri("/api/sessions/x/fit/status")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
    assert!(router(Arc::new(SessionStore::new(SESSION_TTL)), Some("bad\norigin")).is_err());
}

#[tokio::test]
async fn idle_sessions_are_evicted() {
    let store = Arc::new(SessionStore::new(Duration::from_secs(5)));
    let app = router(Arc::clone(&store), None).unwrap();
    let id = upload(&app, &source(), BitDepth::Eight).await;
    assert_eq!(store.evict_idle(Instant::now()), 0);
    assert_eq!(store.evict_idle(Instant::now() + Duration::from_secs(6)), 1);
    assert!(store.is_empty());
    let r = call(&app, "GET", &format!("/api/sessions/{id}/fit/status"), Body::empty()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_ids_are_unguessable() {
    let store = SessionStore::new(SESSION_TTL);
    let (a, _) = store.create(source());
    let (b, _) = store.create(source());
    assert_eq!(a.len(), 32);
    assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    assert_ne!(a, b);
}
