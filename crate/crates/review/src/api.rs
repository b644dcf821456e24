use std::sync::{Arc, PoisonError, RwLock, RwLockReadGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gta_core::model::TruthLabel;
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;
use crate::state::{FlagFilter, ReviewState};

pub type SharedState = Arc<RwLock<ReviewState>>;

#[derive(Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Ambiguous(_) => StatusCode::CONFLICT,
            ReviewError::InvalidLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { code: self.code(), message: self.to_string() })).into_response()
    }
}

#[derive(Deserialize)]
struct FlagQuery {
    #[serde(default)]
    flag: Option<String>,
}

impl FlagQuery {
    fn filter(&self) -> Result<FlagFilter, ReviewError> {
        match self.flag.as_deref() {
            None | Some("all") => Ok(FlagFilter::All),
            Some("lc") => Ok(FlagFilter::Lc),
            Some(other) => Err(ReviewError::BadRequest(format!("flag must be lc or all, got {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct LabelRequest {
    label: String,
    #[serde(default)]
    note: Option<String>,
}

fn read(state: &SharedState) -> RwLockReadGuard<'_, ReviewState> {
    state.read().unwrap_or_else(PoisonError::into_inner)
}

async fn drives(State(s): State<SharedState>) -> impl IntoResponse {
    Json(read(&s).drives())
}

async fn drive_detections(
    State(s): State<SharedState>,
    Path(drive): Path<String>,
    Query(q): Query<FlagQuery>,
) -> Result<impl IntoResponse, ReviewError> {
    let st = read(&s);
    let d = st.drive_index(&drive)?;
    Ok(Json(st.detections(Some(d), q.filter()?)))
}

async fn all_detections(State(s): State<SharedState>, Query(q): Query<FlagQuery>) -> Result<impl IntoResponse, ReviewError> {
    Ok(Json(read(&s).detections(None, q.filter()?)))
}

async fn detection(State(s): State<SharedState>, Path(key): Path<String>) -> Result<impl IntoResponse, ReviewError> {
    Ok(Json(read(&s).detection(&key)?))
}

async fn label(State(s): State<SharedState>, Path(key): Path<String>, body: Bytes) -> Result<impl IntoResponse, ReviewError> {
    let req: LabelRequest = serde_json::from_slice(&body).map_err(|e| ReviewError::BadRequest(e.to_string()))?;
    let label = TruthLabel::parse(&req.label).ok_or(ReviewError::InvalidLabel(req.label))?;
    let mut st = s.write().unwrap_or_else(PoisonError::into_inner);
    Ok(Json(st.apply_label(&key, label, req.note)?))
}

async fn frame(State(s): State<SharedState>, Path(key): Path<String>) -> Result<impl IntoResponse, ReviewError> {
    let f = read(&s).frame(&key)?;
    Ok(([(header::CONTENT_TYPE, f.content_type)], f.bytes))
}

async fn report(State(s): State<SharedState>) -> impl IntoResponse {
    Json(read(&s).report())
}

async fn fallback() -> ReviewError {
    ReviewError::NotFound("route".into())
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/drives", get(drives))
        .route("/api/drives/{id}/detections", get(drive_detections))
        .route("/api/detections", get(all_detections))
        .route("/api/detections/{id}", get(detection))
        .route("/api/detections/{id}/label", post(label))
        .route("/api/frames/{id}", get(frame))
        .route("/api/report", get(report))
        .fallback(fallback)
        .with_state(state)
}
