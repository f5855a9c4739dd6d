//! HTTP front end for steering sessions, plus the static UI bundle.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use manifold_explore::steer::{CreateSession, SessionManager};
use manifold_explore::{EnvConfig, Error};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

const INDEX_HTML: &str = include_str!("../ui/index.html");
const APP_JS: &str = include_str!("../ui/app.js");

type Shared = Arc<SessionManager>;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

fn status_of(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        Error::State(_) => (StatusCode::CONFLICT, "state"),
        Error::Precondition(_) => (StatusCode::PRECONDITION_FAILED, "precondition"),
        Error::Config { .. } | Error::Environment(_) => (StatusCode::BAD_REQUEST, "config"),
        Error::Input(_) | Error::Index { .. } | Error::Domain(_) | Error::Shape { .. } | Error::Json(_) => {
            (StatusCode::BAD_REQUEST, "invalid")
        }
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = status_of(&self.0);
        let mut body = json!({ "error": kind, "message": self.0.to_string() });
        if let Error::Config { field, .. } = &self.0 {
            body["field"] = json!(field);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs CPU-bound session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::State(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn checkpoints(State(m): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "checkpoints": m.checkpoints(), "config": m.config() }))
}

async fn create(State(m): State<Shared>, body: Result<Json<serde_json::Value>, axum::extract::rejection::JsonRejection>) -> Response {
    let mut raw = match body {
        Ok(Json(v)) => v,
        Err(e) => return ApiError(Error::Input(e.body_text())).into_response(),
    };
    let env = match raw.as_object_mut().and_then(|o| o.remove("env")) {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => match EnvConfig::from_value(v) {
            Ok(env) => Some(env),
            Err(e) => return ApiError(e).into_response(),
        },
    };
    let req = match serde_json::from_value::<CreateSession>(raw) {
        Ok(r) => CreateSession { env, ..r },
        Err(e) => return ApiError(Error::Json(e)).into_response(),
    };
    match blocking(move || m.create_session(&req).and_then(|id| m.get(&id))).await {
        Ok(view) => (StatusCode::CREATED, Json(view)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list(State(m): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": m.session_ids() }))
}

async fn session(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<manifold_explore::steer::SessionView> {
    Ok(Json(blocking(move || m.get(&id)).await?))
}

async fn dimensions(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let threshold = m.config().threshold_db;
    let dims = blocking(move || m.list_dimensions(&id)).await?;
    Ok(Json(json!({ "threshold_db": threshold, "dimensions": dims })))
}

#[derive(Deserialize)]
struct ProposalQuery {
    dim: usize,
    batch: Option<usize>,
    k: Option<usize>,
}

async fn proposals(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ProposalQuery>,
) -> ApiResult<manifold_explore::steer::SessionProposalSet> {
    Ok(Json(blocking(move || m.get_proposals(&id, q.dim, q.batch, q.k)).await?))
}

#[derive(Deserialize)]
struct SelectBody {
    proposal: u64,
}

async fn select(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(b): Json<SelectBody>,
) -> ApiResult<manifold_explore::steer::ExecutionResult> {
    Ok(Json(blocking(move || m.select_proposal(&id, b.proposal)).await?))
}

#[derive(Deserialize, Default)]
struct AutoBody {
    #[serde(default)]
    alpha: f64,
}

async fn auto(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<AutoBody>>,
) -> ApiResult<manifold_explore::steer::ExecutionResult> {
    let alpha = body.map(|Json(b)| b.alpha).unwrap_or_default();
    Ok(Json(blocking(move || m.step_auto(&id, alpha)).await?))
}

async fn history(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let (h, record) = blocking(move || Ok((m.history(&id)?, m.record(&id)?))).await?;
    Ok(Json(json!({ "history": h, "record": record })))
}

async fn app_js() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/javascript; charset=utf-8")], APP_JS)
}

/// API routes plus the UI: the embedded bundle, or files from `ui_dir`.
pub fn router(manager: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/checkpoints", get(checkpoints))
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}", get(session))
        .route("/api/sessions/{id}/dimensions", get(dimensions))
        .route("/api/sessions/{id}/proposals", get(proposals))
        .route("/api/sessions/{id}/select", post(select))
        .route("/api/sessions/{id}/auto", post(auto))
        .route("/api/sessions/{id}/history", get(history))
        .with_state(manager);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api
            .route("/", get(|| async { Html(INDEX_HTML) }))
            .route("/app.js", get(app_js)),
    }
}
