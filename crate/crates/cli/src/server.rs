//! HTTP JSON API over loaded studies.
//!
//! ```text
//! GET  /study/{id}/next?rater=R     200 QueryView | 204 when R has rated everything
//! POST /study/{id}/vote             {query_id, rater, slot} -> {status}
//! GET  /study/{id}/results          StudyResults
//! GET  /study/{id}/progress?rater=R Progress
//! ```
//!
//! Errors come back as `{"error": "..."}` with 400, 404 or 409.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::commands::{CliResult, ServeStudyArgs};
use crate::study::{Study, StudyError, Vote};

type Studies = Arc<HashMap<String, Mutex<Study>>>;

/// Opens each bundle; two bundles with the same study id are refused.
pub fn load_studies(dirs: &[PathBuf]) -> Result<HashMap<String, Mutex<Study>>, StudyError> {
    let mut out = HashMap::new();
    for d in dirs {
        let s = Study::open(d)?;
        let id = s.id().to_string();
        if out.insert(id.clone(), Mutex::new(s)).is_some() {
            return Err(StudyError::DuplicateStudy(id));
        }
    }
    Ok(out)
}

pub fn router(studies: HashMap<String, Mutex<Study>>, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/study/{id}/next", get(next))
        .route("/study/{id}/vote", post(vote))
        .route("/study/{id}/results", get(results))
        .route("/study/{id}/progress", get(progress))
        .with_state(Arc::new(studies));
    match static_dir {
        Some(d) => app.fallback_service(ServeDir::new(d)),
        None => app,
    }
}

pub fn serve_blocking(a: &ServeStudyArgs) -> CliResult<()> {
    let studies = load_studies(&a.bundles)?;
    let ids: Vec<String> = studies.keys().cloned().collect();
    let app = router(studies, a.static_dir.clone());
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("serving {} on http://{}", ids.join(", "), listener.local_addr()?);
        axum::serve(listener, app).await
    })?;
    Ok(())
}

struct ApiError(StudyError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match &self.0 {
            StudyError::UnknownStudy(_) | StudyError::UnknownQuery(_) => StatusCode::NOT_FOUND,
            StudyError::UnknownSlot { .. } | StudyError::MissingRater => StatusCode::BAD_REQUEST,
            StudyError::AlreadyVoted { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        Self(e)
    }
}

fn with_study<R>(studies: &Studies, id: &str, f: impl FnOnce(&mut Study) -> Result<R, StudyError>) -> Result<R, ApiError> {
    let cell = studies.get(id).ok_or_else(|| StudyError::UnknownStudy(id.to_string()))?;
    let mut guard = cell.lock().unwrap_or_else(|p| p.into_inner());
    Ok(f(&mut guard)?)
}

#[derive(Deserialize)]
struct RaterQuery {
    #[serde(default)]
    rater: String,
}

async fn next(State(s): State<Studies>, Path(id): Path<String>, Query(q): Query<RaterQuery>) -> Result<Response, ApiError> {
    Ok(match with_study(&s, &id, |st| st.next(&q.rater))? {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn vote(State(s): State<Studies>, Path(id): Path<String>, Json(v): Json<Vote>) -> Result<Response, ApiError> {
    let status = with_study(&s, &id, |st| st.vote(&v))?;
    Ok(Json(json!({ "status": status })).into_response())
}

async fn results(State(s): State<Studies>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(with_study(&s, &id, |st| Ok(st.results()))?).into_response())
}

async fn progress(State(s): State<Studies>, Path(id): Path<String>, Query(q): Query<RaterQuery>) -> Result<Response, ApiError> {
    Ok(Json(with_study(&s, &id, |st| Ok(st.progress(&q.rater)))?).into_response())
}
