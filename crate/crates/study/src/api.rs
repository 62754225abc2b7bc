use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::config::StudyConfig;
use crate::error::{ErrorBody, StudyError, StudyResult};
use crate::render::Window;
use crate::session::{ScoreSubmission, Study};

const FALLBACK_PAGE: &str = include_str!("../www/index.html");

#[derive(Debug, Deserialize)]
struct CreateSession {
    observer_id: String,
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> StudyResult<T> {
    serde_json::from_slice(body).map_err(|e| StudyError::Validation(format!("bad request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> StudyResult<T> + Send + 'static) -> StudyResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(StudyError::Corrupt(format!("worker failed: {e}"))))
}

async fn create_session(State(study): State<Arc<Study>>, body: Bytes) -> StudyResult<Response> {
    let req: CreateSession = parse_json(&body)?;
    let view = blocking(move || study.create_session(&req.observer_id)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(study): State<Arc<Study>>, Path(sid): Path<String>) -> StudyResult<Response> {
    Ok(Json(study.session(&sid)?).into_response())
}

async fn next_stack(State(study): State<Arc<Study>>, Path(sid): Path<String>) -> StudyResult<Response> {
    Ok(Json(study.next(&sid)?).into_response())
}

async fn submit_score(
    State(study): State<Arc<Study>>,
    Path(sid): Path<String>,
    body: Bytes,
) -> StudyResult<Response> {
    let submission: ScoreSubmission = parse_json(&body)?;
    let ack = blocking(move || study.record_score(&sid, &submission)).await?;
    Ok(Json(ack).into_response())
}

async fn session_results(State(study): State<Arc<Study>>, Path(sid): Path<String>) -> StudyResult<Response> {
    Ok(Json(study.results(&sid)?).into_response())
}

async fn slice(
    State(study): State<Arc<Study>>,
    Path((token, file)): Path<(String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> StudyResult<Response> {
    let index: usize = file
        .strip_suffix(".png")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| StudyError::Validation(format!("expected <index>.png, got {file}")))?;
    let window = match (query.get("lo"), query.get("hi")) {
        (None, None) => None,
        (lo, hi) => {
            let parse = |v: Option<&String>, d: f32| -> StudyResult<f32> {
                v.map_or(Ok(d), |s| {
                    s.parse()
                        .map_err(|_| StudyError::Validation(format!("window bound {s} is not a number")))
                })
            };
            let default = study.config().window;
            Some(Window {
                lo: parse(lo, default.lo)?,
                hi: parse(hi, default.hi)?,
            })
        }
    };
    let png = blocking(move || study.slice_png(&token, index, window)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "private, max-age=3600"),
        ],
        png,
    )
        .into_response())
}

async fn fallback_page() -> Html<&'static str> {
    Html(FALLBACK_PAGE)
}

/// API routes plus the viewer: `static_dir` when configured, otherwise the
/// built-in page.
pub fn router(study: Arc<Study>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/next", get(next_stack))
        .route("/sessions/{sid}/scores", post(submit_score))
        .route("/sessions/{sid}/results", get(session_results))
        .route("/stacks/{id}/slices/{file}", get(slice))
        .fallback(|uri: Uri| async move {
            let body = ErrorBody {
                code: "not_found".into(),
                message: format!("no such endpoint {}", uri.path()),
            };
            (StatusCode::NOT_FOUND, Json(body))
        })
        .with_state(study.clone());
    let app = Router::new().nest("/api", api);
    match &study.config().static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(fallback_page)),
    }
}

/// Bind and serve until Ctrl-C.
pub async fn serve(config: StudyConfig) -> StudyResult<()> {
    let bind = config.bind.clone();
    let study = Arc::new(Study::open(config)?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| StudyError::io(&bind, e))?;
    log::info!(
        "study server on http://{bind} ({} stacks per session)",
        study.selection().len()
    );
    axum::serve(listener, router(study))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| StudyError::io(&bind, e))
}
