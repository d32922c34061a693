//! REST and SSE routes.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use pulsemon_core::wire::MAX_SID_LEN;
use pulsemon_core::{CalibrationCommand, Sample};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::ingest::{ingest_body, unix_ms, IngestCounts};
use crate::store::VitalsRecord;
use crate::Shared;

/// Default waveform window for `GET .../waveform`.
pub const DEFAULT_WINDOW_S: f64 = 10.0;
/// Default history length for `GET .../vitals/history`.
pub const DEFAULT_HISTORY_N: usize = 100;
const MAX_INGEST_BODY: usize = 16 * 1024 * 1024;

/// Body of the vitals endpoints. All reading fields are null until the
/// session has sent a vitals frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsView {
    pub sid: String,
    pub seq: Option<u64>,
    pub t_ms: Option<u64>,
    pub bpm: Option<f64>,
    pub temp_c: Option<f64>,
    pub temp_f: Option<f64>,
    pub valid: bool,
    pub beats_used: u32,
    pub window_s: f64,
}

impl VitalsView {
    fn empty(sid: &str) -> Self {
        Self {
            sid: sid.to_owned(),
            seq: None,
            t_ms: None,
            bpm: None,
            temp_c: None,
            temp_f: None,
            valid: false,
            beats_used: 0,
            window_s: 0.0,
        }
    }

    fn from_record(sid: &str, r: &VitalsRecord) -> Self {
        Self {
            sid: sid.to_owned(),
            seq: Some(r.seq),
            t_ms: Some(r.t_ms),
            bpm: r.vitals.bpm,
            temp_c: Some(r.vitals.temp_c),
            temp_f: Some(r.vitals.temp_f),
            valid: r.vitals.valid,
            beats_used: r.vitals.beats_used,
            window_s: r.vitals.window_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformView {
    pub sid: String,
    pub window_s: f64,
    pub fs_hz: Option<f64>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    sessions: usize,
    #[serde(flatten)]
    totals: IngestCounts,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Unprocessable(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
        };
        (status, Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

fn check_sid(sid: &str) -> Result<(), ApiError> {
    if sid.is_empty() || sid.len() > MAX_SID_LEN {
        return Err(ApiError::BadRequest(format!(
            "sid must be 1..={MAX_SID_LEN} bytes"
        )));
    }
    Ok(())
}

fn unknown(sid: &str) -> ApiError {
    ApiError::NotFound(format!("unknown session `{sid}`"))
}

pub fn router(shared: Arc<Shared>, static_dir: Option<std::path::PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(health))
        .route("/ingest", post(ingest))
        .route("/api/sessions", get(sessions))
        .route("/api/sessions/{sid}/vitals/latest", get(latest))
        .route("/api/sessions/{sid}/vitals/history", get(history))
        .route("/api/sessions/{sid}/waveform", get(waveform))
        .route("/api/sessions/{sid}/stream", get(live))
        .route(
            "/api/sessions/{sid}/calibration",
            post(set_calibration).get(take_calibration),
        )
        .layer(DefaultBodyLimit::max(MAX_INGEST_BODY))
        .with_state(shared);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        sessions: shared.store().session_count(),
        totals: shared.totals(),
    })
}

async fn ingest(State(shared): State<Arc<Shared>>, body: Bytes) -> Json<IngestCounts> {
    Json(ingest_body(&shared, &body))
}

async fn sessions(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(shared.store().summaries())
}

async fn latest(
    State(shared): State<Arc<Shared>>,
    Path(sid): Path<String>,
) -> Result<Json<VitalsView>, ApiError> {
    let store = shared.store();
    let session = store.session(&sid).ok_or_else(|| unknown(&sid))?;
    Ok(Json(match &session.latest_vitals {
        Some(r) => VitalsView::from_record(&sid, r),
        None => VitalsView::empty(&sid),
    }))
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    n: Option<usize>,
}

async fn history(
    State(shared): State<Arc<Shared>>,
    Path(sid): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> Result<Json<Vec<VitalsView>>, ApiError> {
    let store = shared.store();
    let session = store.session(&sid).ok_or_else(|| unknown(&sid))?;
    let n = q.n.unwrap_or(DEFAULT_HISTORY_N);
    let skip = session.history.len().saturating_sub(n);
    Ok(Json(
        session
            .history
            .iter()
            .skip(skip)
            .map(|r| VitalsView::from_record(&sid, r))
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct WaveformQuery {
    window_s: Option<f64>,
}

async fn waveform(
    State(shared): State<Arc<Shared>>,
    Path(sid): Path<String>,
    Query(q): Query<WaveformQuery>,
) -> Result<Response, ApiError> {
    let requested = q.window_s.unwrap_or(DEFAULT_WINDOW_S);
    if !(requested.is_finite() && requested >= 0.0) {
        return Err(ApiError::BadRequest(
            "window_s must be finite and >= 0".into(),
        ));
    }
    let store = shared.store();
    let capacity_s = store.config().ring_seconds;
    let session = store.session(&sid).ok_or_else(|| unknown(&sid))?;
    let clamped = requested > capacity_s;
    let window_s = requested.min(capacity_s);
    let body = WaveformView {
        sid: sid.clone(),
        window_s,
        fs_hz: session.fs_hz,
        samples: session.ring.window(window_s),
    };
    drop(store);
    let mut headers = HeaderMap::new();
    if clamped {
        headers.insert("x-window-clamped", HeaderValue::from_static("true"));
    }
    Ok((headers, Json(body)).into_response())
}

async fn live(
    State(shared): State<Arc<Shared>>,
    Path(sid): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    check_sid(&sid)?;
    let rx = shared.store().subscribe(&sid);
    let events = stream::unfold(Some(rx), |state| async move {
        let mut rx = state?;
        match rx.recv().await {
            Ok(line) => Some((Ok(Event::default().event("frame").data(&*line)), Some(rx))),
            Err(RecvError::Lagged(dropped)) => {
                let data = format!("{{\"dropped\":{dropped}}}");
                Some((Ok(Event::default().event("overflow").data(data)), None))
            }
            Err(RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn set_calibration(
    State(shared): State<Arc<Shared>>,
    Path(sid): Path<String>,
    Json(mut cmd): Json<CalibrationCommand>,
) -> Result<(StatusCode, Json<CalibrationCommand>), ApiError> {
    check_sid(&sid)?;
    if let Some(th) = cmd.threshold_v {
        if !(th.is_finite() && (0.0..=5.0).contains(&th)) {
            return Err(ApiError::Unprocessable(format!(
                "threshold_v {th} outside [0, 5] V"
            )));
        }
    }
    if let Some(r) = cmd.refractory_s {
        if !(r.is_finite() && r > 0.0) {
            return Err(ApiError::Unprocessable(format!(
                "refractory_s {r} must be finite and > 0"
            )));
        }
    }
    if cmd.issued_at_ms == 0 {
        cmd.issued_at_ms = unix_ms();
    }
    shared.store().set_calibration(&sid, cmd.clone());
    Ok((StatusCode::ACCEPTED, Json(cmd)))
}

async fn take_calibration(State(shared): State<Arc<Shared>>, Path(sid): Path<String>) -> Response {
    match shared.store().take_calibration(&sid) {
        Some(cmd) => Json(cmd).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}
