//! HTTP session service: upload an image, fit curves in the background,
//! then preview interpolations, inspect and edit curves, and export presets.

mod request;
mod session;

use std::io::{Cursor, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tonefit::imageio::{decode_png, encode_png};
use tonefit::preset::{encode_preset, manifest_for, PresetManifest, MANIFEST_NAME};
use tonefit::synthetic::auto_contrast;
use tonefit::{CurveTriple, Image, InterpolationWeights, PngCurve, SolutionSet};
use tower_http::cors::CorsLayer;

pub use request::{parse_fit_request, FitRequest, RequestError};
pub use session::{FitStatus, JobState, Session, SessionStore};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 << 20;
/// Sessions idle this long are dropped.
pub const SESSION_TTL: Duration = Duration::from_secs(3600);
const EVICTION_PERIOD: Duration = Duration::from_secs(60);

pub type AppState = Arc<SessionStore>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "no such session")
    }

    fn no_fit() -> Self {
        Self::new(StatusCode::CONFLICT, "no completed fit")
    }

    fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "a fit job is already running")
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.get(id).ok_or_else(ApiError::not_found)
}

fn fitted(s: &Session) -> ApiResult<(Arc<SolutionSet>, u64)> {
    s.fitted().ok_or_else(ApiError::no_fit)
}

fn png_response(bytes: impl Into<Vec<u8>>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes.into()).into_response()
}

fn encode(image: &Image) -> ApiResult<Vec<u8>> {
    encode_png(&image.clamped(), image.depth()).map_err(ApiError::internal)
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty body; expected a PNG"));
    }
    let image = decode_png(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let (width, height) = image.dims();
    let (id, _) = state.create(image);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "width": width, "height": height })),
    )
        .into_response())
}

async fn start_fit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let request = parse_fit_request(&body).map_err(|e| match e {
        RequestError::Syntax(m) => ApiError::new(StatusCode::BAD_REQUEST, m),
        RequestError::Invalid(m) => ApiError::unprocessable(m),
    })?;
    let reference = match request.reference_png {
        Some(bytes) => {
            let r = decode_png(&bytes).map_err(|e| ApiError::unprocessable(format!("reference: {e}")))?;
            if r.dims() != s.source.dims() {
                return Err(ApiError::unprocessable(format!(
                    "reference: expected {:?}, found {:?}",
                    s.source.dims(),
                    r.dims()
                )));
            }
            r
        }
        None => auto_contrast(&s.source),
    };
    session::start_fit(&s, reference, request.config).map_err(|_| ApiError::busy())?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": "started" }))).into_response())
}

async fn fit_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FitStatus>> {
    Ok(Json(session(&state, &id)?.status()))
}

#[derive(Deserialize)]
struct PreviewQuery {
    weights: Option<String>,
}

async fn preview(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let (set, revision) = fitted(&s)?;
    if set.mode() != tonefit::FusionMode::Constrained {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "interpolation requires constrained mode",
        ));
    }
    let weights = match q.weights.as_deref() {
        None => InterpolationWeights::equal(set.len()),
        Some(text) => text.parse::<InterpolationWeights>().map_err(ApiError::unprocessable)?,
    };
    if weights.len() != set.len() {
        return Err(ApiError::unprocessable(format!(
            "expected {} weights, got {}",
            set.len(),
            weights.len()
        )));
    }
    let key: Vec<u64> = weights.relative().iter().map(|w| w.to_bits()).collect();
    if let Some(hit) = s.preview.lock().as_ref() {
        if hit.key == key && hit.revision == revision {
            return Ok(png_response(hit.png.as_ref().clone()));
        }
    }
    let source = Arc::clone(&s.source);
    let png = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        encode(&set.interpolate(&source, &weights).map_err(ApiError::internal)?)
    })
    .await
    .map_err(ApiError::internal)??;
    let png = Arc::new(png);
    *s.preview.lock() = Some(session::CachedPreview {
        key,
        revision,
        png: Arc::clone(&png),
    });
    Ok(png_response(png.as_ref().clone()))
}

async fn solution(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let (set, _) = fitted(&s)?;
    let triple = set
        .triples()
        .get(index)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no solution {index}")))?
        .clone();
    let source = Arc::clone(&s.source);
    let png = tokio::task::spawn_blocking(move || encode(&triple.apply(&source)))
        .await
        .map_err(ApiError::internal)??;
    Ok(png_response(png))
}

async fn get_curves(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let (set, _) = fitted(&s)?;
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        manifest_for(&set).to_json(),
    )
        .into_response())
}

/// Curve triples from an edited manifest, with errors naming the field.
fn edited_triples(manifest: &PresetManifest) -> Result<Vec<CurveTriple>, String> {
    manifest
        .curves
        .iter()
        .enumerate()
        .map(|(i, triple)| {
            let curves = triple
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    PngCurve::new(p.knots.clone(), p.alphas.clone(), manifest.iterations)
                        .map_err(|e| format!("curves[{i}][{c}]: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let [r, g, b]: [PngCurve; 3] = curves.try_into().expect("three channels");
            CurveTriple::new(r, g, b).map_err(|e| format!("curves[{i}]: {e}"))
        })
        .collect()
}

async fn put_curves(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    let s = session(&state, &id)?;
    let (set, _) = fitted(&s)?;
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let manifest = PresetManifest::parse(text).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    if manifest.fusion_mode != set.mode() {
        return Err(ApiError::unprocessable(format!(
            "fusion_mode: session is {}, manifest says {}",
            set.mode(),
            manifest.fusion_mode
        )));
    }
    let triples = edited_triples(&manifest).map_err(ApiError::unprocessable)?;
    let edited = set
        .with_triples(triples)
        .map_err(|e| ApiError::unprocessable(format!("curves: {e}")))?;
    s.replace_set(edited).map_err(|_| ApiError::busy())?;
    Ok(StatusCode::NO_CONTENT)
}

fn zip_preset(set: &SolutionSet) -> Result<Vec<u8>, String> {
    let (manifest, files) = encode_preset(set).map_err(|e| e.to_string())?;
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options =
        zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    let entries = std::iter::once((MANIFEST_NAME.to_string(), manifest.to_json().into_bytes())).chain(files);
    for (name, bytes) in entries {
        zip.start_file(name, options).map_err(|e| e.to_string())?;
        zip.write_all(&bytes).map_err(|e| e.to_string())?;
    }
    Ok(zip.finish().map_err(|e| e.to_string())?.into_inner())
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let (set, _) = fitted(&s)?;
    let bytes = tokio::task::spawn_blocking(move || zip_preset(&set))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"preset.zip\""),
        ],
        bytes,
    )
        .into_response())
}

/// The service's routes over `state`. With `cors_origin`, cross-origin
/// requests from exactly that origin are allowed.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Result<Router, String> {
    let mut app = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/fit", post(start_fit))
        .route("/api/sessions/{id}/fit/status", get(fit_status))
        .route("/api/sessions/{id}/preview", get(preview))
        .route("/api/sessions/{id}/solutions/{i}", get(solution))
        .route("/api/sessions/{id}/curves", get(get_curves).put(put_curves))
        .route("/api/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    if let Some(origin) = cors_origin {
        let origin = HeaderValue::from_str(origin).map_err(|e| format!("invalid CORS origin {origin:?}: {e}"))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST, Method::PUT])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Serve on `listener` until interrupted, evicting idle sessions.
pub async fn serve(listener: tokio::net::TcpListener, cors_origin: Option<&str>) -> std::io::Result<()> {
    let store = Arc::new(SessionStore::new(SESSION_TTL));
    let app = router(Arc::clone(&store), cors_origin)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let evictor = tokio::spawn(async move {
        let mut tick = tokio::time::interval(EVICTION_PERIOD);
        loop {
            tick.tick().await;
            store.evict_idle(Instant::now());
        }
    });
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    evictor.abort();
    result
}
