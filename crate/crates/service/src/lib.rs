//! HTTP front end: `/classify`, `/feedback`, `/health` and the annotation
//! workflow under `/fams`.

mod classify;
mod fams_routes;
mod state;

pub use classify::{FeedbackAck, Health};
pub use fams_routes::{CandidateView, CandidatesReply, ConfirmReply, KEY_HEADER};
pub use state::{AppState, FaultHook, StartupError};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use foodai_core::api::ErrorResponse;
use foodai_core::config::Config;
use std::sync::Arc;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/classify", get(classify::classify_get).post(classify::classify_post))
        .route("/feedback", get(classify::feedback))
        .route("/health", get(classify::health))
        .route("/fams/tasks", post(fams_routes::create).get(fams_routes::list))
        .route("/fams/tasks/{id}", get(fams_routes::show))
        .route("/fams/tasks/{id}/assign", post(fams_routes::assign))
        .route("/fams/tasks/{id}/fetch", post(fams_routes::fetch))
        .route("/fams/tasks/{id}/candidates", get(fams_routes::candidates))
        .route("/fams/tasks/{id}/selections", post(fams_routes::selections))
        .route("/fams/tasks/{id}/submit", post(fams_routes::submit))
        .route("/fams/tasks/{id}/confirm", post(fams_routes::confirm))
        .with_state(state)
}

/// Error reply carrying the status code in the body as well.
pub(crate) fn error_response(status: StatusCode, msg: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorResponse {
            status_code: status.as_u16(),
            status_msg: msg.into(),
        }),
    )
        .into_response()
}

/// Loads state from `config` and serves until the process is stopped.
pub async fn serve(config: Config) -> Result<(), StartupError> {
    let state = Arc::new(AppState::load(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| StartupError::Bind(config.listen.clone(), e))?;
    eprintln!(
        "serving checkpoint {} on {}",
        state.checkpoint.digest(),
        listener.local_addr().map(|a| a.to_string()).unwrap_or_default()
    );
    axum::serve(listener, router(state))
        .await
        .map_err(|e| StartupError::Bind(config.listen.clone(), e))
}
