//! REST surface.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::gallery::{GalleryError, NewStudent, Resolution};
use crate::pipeline::{CaptureEvent, Decision, ScanSource, Service, ServiceError};
use crate::attendance::AttendanceError;

pub type Shared = Arc<Service>;

pub struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NotFound(_)
            | ServiceError::Gallery(GalleryError::UnknownStudent(_) | GalleryError::UnknownStranger(_)) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Gallery(GalleryError::DuplicateRoll(_) | GalleryError::AlreadyResolved(_)) => StatusCode::CONFLICT,
            ServiceError::Gallery(GalleryError::EmptyField(_) | GalleryError::NoScans)
            | ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::Scan(_)
            | ServiceError::Gallery(GalleryError::Scan { .. } | GalleryError::MixedDegrees)
            | ServiceError::Attendance(AttendanceError::NoWorkingDays(..) | AttendanceError::NotWorkingDay(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
pub struct EnrollRequest {
    pub name: String,
    pub roll_number: String,
    pub parent_contact: String,
    pub scans: Vec<ScanSource>,
    #[serde(default)]
    pub enrolled_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct EnrollResponse {
    pub student_id: u64,
}

async fn create_student(State(svc): State<Shared>, Json(req): Json<EnrollRequest>) -> ApiResult<(StatusCode, Json<EnrollResponse>)> {
    let rec = blocking(move || {
        let new = NewStudent {
            name: req.name,
            roll_number: req.roll_number,
            parent_contact: req.parent_contact,
        };
        svc.enroll(new, &req.scans, req.enrolled_at.unwrap_or_else(Utc::now))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(EnrollResponse { student_id: rec.student_id })))
}

async fn get_student(State(svc): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    match svc.student(id) {
        Some(r) => Ok(Json(r).into_response()),
        None => Err(ServiceError::NotFound(format!("student {id}")).into()),
    }
}

async fn post_capture(State(svc): State<Shared>, Json(ev): Json<CaptureEvent>) -> ApiResult<Response> {
    let report = blocking(move || svc.ingest(&ev)).await?;
    let status = match report.decision {
        Decision::Failed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::OK,
    };
    Ok((status, Json(report)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct Range {
    from: Option<String>,
    to: Option<String>,
}

fn parse_date(name: &str, v: Option<&str>) -> ApiResult<NaiveDate> {
    let v = v.ok_or_else(|| bad_request(format!("missing query parameter {name}")))?;
    NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|e| bad_request(format!("{name}: {e}")))
}

impl Range {
    fn dates(&self) -> ApiResult<(NaiveDate, NaiveDate)> {
        Ok((parse_date("from", self.from.as_deref())?, parse_date("to", self.to.as_deref())?))
    }
}

async fn get_attendance(State(svc): State<Shared>, Path(id): Path<u64>, Query(r): Query<Range>) -> ApiResult<Response> {
    let (from, to) = r.dates()?;
    Ok(Json(svc.attendance(id, from, to)?).into_response())
}

async fn get_percentages(State(svc): State<Shared>, Query(r): Query<Range>) -> ApiResult<Response> {
    let (from, to) = r.dates()?;
    Ok(Json(svc.percentages(from, to)?).into_response())
}

#[derive(Debug, Deserialize)]
pub struct YearQuery {
    year: Option<i32>,
}

async fn get_monthly(State(svc): State<Shared>, Path(id): Path<u64>, Query(q): Query<YearQuery>) -> ApiResult<Response> {
    let year = q.year.ok_or_else(|| bad_request("missing query parameter year"))?;
    Ok(Json(svc.monthly(id, year)?).into_response())
}

#[derive(Debug, Deserialize)]
pub struct StatusQuery {
    status: Option<String>,
}

async fn get_strangers(State(svc): State<Shared>, Query(q): Query<StatusQuery>) -> ApiResult<Response> {
    Ok(Json(svc.strangers(q.status.as_deref())?).into_response())
}

async fn resolve(State(svc): State<Shared>, Path(id): Path<u64>, Json(action): Json<Resolution>) -> ApiResult<Response> {
    let report = blocking(move || svc.resolve_and_mark(id, action)).await?;
    Ok(Json(report).into_response())
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/students", post(create_student))
        .route("/students/{id}", get(get_student))
        .route("/captures", post(post_capture))
        .route("/attendance/{student_id}", get(get_attendance))
        .route("/reports/percentages", get(get_percentages))
        .route("/reports/monthly/{student_id}", get(get_monthly))
        .route("/strangers", get(get_strangers))
        .route("/strangers/{id}/resolve", post(resolve))
        .with_state(svc)
}

pub async fn serve(svc: Shared) -> std::io::Result<()> {
    let addr = svc.config().listen_addr.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
