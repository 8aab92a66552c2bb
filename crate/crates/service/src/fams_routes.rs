use crate::{error_response, AppState};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::Engine;
use foodai_core::fams::{Actor, AnnotationTask, FamsError, Role};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

pub const KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Default, Deserialize)]
pub struct KeyParam {
    api_key: Option<String>,
    /// Filters the task list.
    assignee: Option<String>,
}

fn actor(state: &AppState, headers: &HeaderMap, q: &KeyParam) -> Result<Actor, Response> {
    let key = headers
        .get(KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| q.api_key.clone())
        .ok_or_else(|| error_response(StatusCode::UNAUTHORIZED, "missing API key"))?;
    let user = state
        .fams_users
        .get(&key)
        .ok_or_else(|| error_response(StatusCode::UNAUTHORIZED, "unknown API key"))?;
    Ok(Actor {
        id: user.id.clone(),
        role: user.role,
    })
}

fn fams_error(e: FamsError) -> Response {
    let status = match &e {
        FamsError::Permission { .. } | FamsError::NotAssignee(_) => StatusCode::FORBIDDEN,
        FamsError::UnknownTask(_) => StatusCode::NOT_FOUND,
        FamsError::InvalidState { .. } | FamsError::Stale { .. } => StatusCode::CONFLICT,
        FamsError::UnknownLabel(_) | FamsError::UnknownCandidate(_) | FamsError::Validation(_) => StatusCode::BAD_REQUEST,
        FamsError::Unresolvable(_) => StatusCode::UNPROCESSABLE_ENTITY,
        FamsError::SourceUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        FamsError::Corpus(_) | FamsError::Log(_) | FamsError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error_response(status, e.to_string())
}

fn task_reply(status: StatusCode, r: Result<&AnnotationTask, FamsError>) -> Response {
    match r {
        Ok(task) => (status, Json(task)).into_response(),
        Err(e) => fams_error(e),
    }
}

/// Annotators only see tasks assigned to them.
fn visible(actor: &Actor, task: &AnnotationTask) -> bool {
    actor.role == Role::Manager || task.assignee.as_deref() == Some(actor.id.as_str())
}

#[derive(Debug, Deserialize)]
pub struct CreateBody {
    pub keywords: Vec<String>,
    pub count_per_keyword: usize,
    pub label: String,
}

/// Creates a task and fetches its candidates in one step. If the source
/// fails the task is left in draft and the error is returned; the fetch
/// can be retried through `/fetch`.
pub async fn create(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    Json(body): Json<CreateBody>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let labels = state.labels();
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    let id = match store.create_task(&actor, &body.keywords, body.count_per_keyword, &body.label, &labels) {
        Ok(t) => t.id.clone(),
        Err(e) => return fams_error(e),
    };
    task_reply(StatusCode::CREATED, store.fetch_candidates(&id, &actor, state.source.as_ref(), None))
}

#[derive(Debug, Default, Deserialize)]
pub struct StampBody {
    pub stamp: Option<u64>,
}

pub async fn fetch(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    body: Option<Json<StampBody>>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let stamp = body.and_then(|b| b.0.stamp);
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    task_reply(StatusCode::OK, store.fetch_candidates(&id, &actor, state.source.as_ref(), stamp))
}

pub async fn list(State(state): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<KeyParam>) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    let tasks: Vec<&AnnotationTask> = store
        .tasks()
        .filter(|t| visible(&actor, t))
        .filter(|t| q.assignee.is_none() || t.assignee == q.assignee)
        .collect();
    Json(tasks).into_response()
}

pub async fn show(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    match store.task(&id) {
        Ok(t) if visible(&actor, t) => Json(t).into_response(),
        Ok(_) => error_response(StatusCode::FORBIDDEN, format!("task {id} is not assigned to {}", actor.id)),
        Err(e) => fams_error(e),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub keyword: String,
    pub selected: bool,
    /// Base64 PNG thumbnail.
    pub thumbnail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesReply {
    pub task_id: String,
    pub stamp: u64,
    pub candidates: Vec<CandidateView>,
}

pub async fn candidates(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    let task = match store.task(&id) {
        Ok(t) if visible(&actor, t) => t,
        Ok(_) => return error_response(StatusCode::FORBIDDEN, format!("task {id} is not assigned to {}", actor.id)),
        Err(e) => return fams_error(e),
    };
    let mut views = Vec::with_capacity(task.candidates.len());
    for c in &task.candidates {
        let path = store.dir().join(&c.thumbnail_ref);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                return error_response(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    format!("reading {}: {e}", path.display()),
                )
            }
        };
        views.push(CandidateView {
            id: c.id.clone(),
            keyword: c.keyword.clone(),
            selected: c.selected,
            thumbnail: base64::engine::general_purpose::STANDARD.encode(bytes),
        });
    }
    Json(CandidatesReply {
        task_id: task.id.clone(),
        stamp: task.stamp,
        candidates: views,
    })
    .into_response()
}

#[derive(Debug, Deserialize)]
pub struct AssignBody {
    pub annotator: String,
    pub stamp: Option<u64>,
}

pub async fn assign(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    Json(body): Json<AssignBody>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    task_reply(StatusCode::OK, store.assign(&id, &actor, &body.annotator, body.stamp))
}

#[derive(Debug, Deserialize)]
pub struct SelectionsBody {
    pub selections: BTreeMap<String, bool>,
    pub stamp: Option<u64>,
}

pub async fn selections(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    Json(body): Json<SelectionsBody>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    task_reply(StatusCode::OK, store.annotate(&id, &actor, &body.selections, body.stamp))
}

pub async fn submit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    body: Option<Json<StampBody>>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let stamp = body.and_then(|b| b.0.stamp);
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    task_reply(StatusCode::OK, store.submit(&id, &actor, stamp))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfirmReply {
    pub task: AnnotationTask,
    pub version: u32,
    pub manifest_digest: String,
}

pub async fn confirm(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<KeyParam>,
    body: Option<Json<StampBody>>,
) -> Response {
    let actor = match actor(&state, &headers, &q) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let stamp = body.and_then(|b| b.0.stamp);
    let labels = state.labels();
    let mut store = state.fams.lock().unwrap_or_else(|e| e.into_inner());
    match store.confirm(&id, &actor, state.source.as_ref(), &state.corpus, &labels, stamp) {
        Ok(version) => match store.task(&id) {
            Ok(task) => Json(ConfirmReply {
                task: task.clone(),
                version: version.version,
                manifest_digest: version.manifest_digest,
            })
            .into_response(),
            Err(e) => fams_error(e),
        },
        Err(e) => fams_error(e),
    }
}
