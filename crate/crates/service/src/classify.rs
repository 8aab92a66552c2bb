use crate::{error_response, AppState};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::Engine;
use foodai_core::api::{build_response, ChallengeTag, FeedbackLabel, FeedbackRecord, QueryRecord};
use foodai_core::image::RgbImage;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

const MAX_IMAGE_BYTES: usize = 16 << 20;

#[derive(Debug, Default, Deserialize)]
pub struct ClassifyParams {
    api_key: Option<String>,
    image_url: Option<String>,
    /// Base64 PNG or PPM, optionally as a `data:` URL.
    image: Option<String>,
}

impl ClassifyParams {
    fn merge(self, body: ClassifyParams) -> ClassifyParams {
        ClassifyParams {
            api_key: body.api_key.or(self.api_key),
            image_url: body.image_url.or(self.image_url),
            image: body.image.or(self.image),
        }
    }
}

fn authorize(state: &AppState, key: Option<&str>) -> Result<(), Response> {
    let keys = state.keys.lock().unwrap_or_else(|e| e.into_inner());
    keys.authorize(key.unwrap_or(""))
        .map(|_| ())
        .map_err(|e| error_response(StatusCode::UNAUTHORIZED, format!("invalid or unapproved API key: {e}")))
}

pub async fn classify_get(State(state): State<Arc<AppState>>, Query(params): Query<ClassifyParams>) -> Response {
    if params.image.is_some() {
        authorize(&state, params.api_key.as_deref()).err().unwrap_or_else(|| {
            error_response(StatusCode::BAD_REQUEST, "image bytes must be sent in a POST body")
        })
    } else {
        classify(state, params).await
    }
}

pub async fn classify_post(
    State(state): State<Arc<AppState>>,
    Query(params): Query<ClassifyParams>,
    body: Bytes,
) -> Response {
    let body_params = if body.iter().all(|b| b.is_ascii_whitespace()) {
        ClassifyParams::default()
    } else {
        match serde_json::from_slice::<ClassifyParams>(&body) {
            Ok(p) => p,
            Err(e) => {
                if let Err(r) = authorize(&state, params.api_key.as_deref()) {
                    return r;
                }
                return error_response(StatusCode::BAD_REQUEST, format!("malformed JSON body: {e}"));
            }
        }
    };
    classify(state, params.merge(body_params)).await
}

fn decode_base64(text: &str) -> Result<Vec<u8>, String> {
    let payload = match text.split_once(";base64,") {
        Some((prefix, data)) if prefix.starts_with("data:") => data,
        _ => text,
    };
    let cleaned: String = payload.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    base64::engine::general_purpose::STANDARD
        .decode(cleaned.as_bytes())
        .map_err(|e| format!("image is not valid base64: {e}"))
}

async fn fetch(state: &AppState, url: &str) -> Result<Vec<u8>, Response> {
    let parsed = reqwest::Url::parse(url)
        .map_err(|e| error_response(StatusCode::BAD_REQUEST, format!("malformed image_url: {e}")))?;
    if parsed.scheme() != "http" {
        return Err(error_response(
            StatusCode::BAD_REQUEST,
            "image_url must use http",
        ));
    }
    let bad_gateway = |m: String| error_response(StatusCode::BAD_GATEWAY, m);
    let resp = state
        .http
        .get(parsed)
        .send()
        .await
        .map_err(|e| bad_gateway(format!("cannot fetch image_url: {e}")))?;
    if !resp.status().is_success() {
        return Err(bad_gateway(format!("image_url returned {}", resp.status())));
    }
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| bad_gateway(format!("reading image_url body: {e}")))?;
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(bad_gateway("image_url body too large".into()));
    }
    Ok(bytes.to_vec())
}

fn internal(e: impl std::fmt::Display) -> Response {
    error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("internal error: {e}"))
}

async fn classify(state: Arc<AppState>, params: ClassifyParams) -> Response {
    if let Err(r) = authorize(&state, params.api_key.as_deref()) {
        return r;
    }
    let bytes = match (&params.image_url, &params.image) {
        (Some(_), Some(_)) => {
            return error_response(StatusCode::BAD_REQUEST, "give either image_url or image, not both");
        }
        (None, None) => return error_response(StatusCode::BAD_REQUEST, "missing image_url or image"),
        (Some(url), None) => match fetch(&state, url).await {
            Ok(b) => b,
            Err(r) => return r,
        },
        (None, Some(data)) => match decode_base64(data) {
            Ok(b) => b,
            Err(m) => return error_response(StatusCode::BAD_REQUEST, m),
        },
    };
    let image = match RgbImage::decode(&bytes) {
        Ok(img) => img,
        Err(e) => return error_response(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let (h, w, _) = state.checkpoint.config().input;
    let input = if image.width() == w && image.height() == h {
        image.clone()
    } else {
        image.resize_nearest(w, h)
    };

    let ck = Arc::clone(&state.checkpoint);
    let inference = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let probs = ck.probabilities(&[&input]);
        (probs, start.elapsed().as_secs_f64())
    })
    .await;
    let (probs, time_cost) = match inference {
        Ok((Ok(mut p), t)) => (p.remove(0), t),
        Ok((Err(e), _)) => return internal(e),
        Err(e) => return internal(e),
    };

    let qid = state.qids.next_qid();
    let image_ref = format!("images/{qid}.png");
    let image_path = state.layout.query_images().join(format!("{qid}.png"));
    let stored = std::fs::create_dir_all(state.layout.query_images()).and_then(|_| std::fs::write(&image_path, image.to_png()));
    if let Err(e) = stored {
        return internal(e);
    }
    let response = build_response(state.checkpoint.label_space(), &probs, &state.taxonomy, qid.clone(), time_cost);
    let record = QueryRecord {
        qid: qid.clone(),
        timestamp: chrono::Utc::now().timestamp(),
        api_key: params.api_key.unwrap_or_default(),
        image_ref,
        response: response.clone(),
    };
    if let Err(e) = state.queries.append(&record) {
        return internal(e);
    }
    state.known_qids.lock().unwrap_or_else(|e| e.into_inner()).insert(qid);
    if let Some(hook) = &state.fault_hook {
        if let Err(e) = hook(&record) {
            return internal(e);
        }
    }
    Json(response).into_response()
}

#[derive(Debug, Deserialize)]
pub struct FeedbackParams {
    api_key: Option<String>,
    qid: Option<String>,
    label: Option<String>,
    tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub status_code: u16,
    pub status_msg: String,
    pub qid: String,
}

pub async fn feedback(State(state): State<Arc<AppState>>, Query(p): Query<FeedbackParams>) -> Response {
    if let Err(r) = authorize(&state, p.api_key.as_deref()) {
        return r;
    }
    let (Some(qid), Some(label)) = (p.qid, p.label) else {
        return error_response(StatusCode::BAD_REQUEST, "qid and label are required");
    };
    if !state.known_qids.lock().unwrap_or_else(|e| e.into_inner()).contains(&qid) {
        return error_response(StatusCode::NOT_FOUND, format!("unknown qid {qid}"));
    }
    let labels = state.taxonomy.label_space();
    let chosen = match FeedbackLabel::parse(&label, &labels) {
        Ok(l) => l,
        Err(m) => return error_response(StatusCode::BAD_REQUEST, m),
    };
    let challenge_tag = match p.tag.as_deref().filter(|t| !t.is_empty()) {
        None => None,
        Some(t) => match t.parse::<ChallengeTag>() {
            Ok(tag) => Some(tag),
            Err(m) => return error_response(StatusCode::BAD_REQUEST, m),
        },
    };
    let record = FeedbackRecord {
        qid: qid.clone(),
        chosen_label: chosen.as_wire(),
        challenge_tag,
        timestamp: chrono::Utc::now().timestamp(),
    };
    if let Err(e) = state.feedback.append(&record) {
        return internal(e);
    }
    Json(FeedbackAck {
        status_code: 200,
        status_msg: "OK".into(),
        qid,
    })
    .into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_digest: String,
    pub num_classes: usize,
    pub dataset_version: Option<u32>,
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        checkpoint_digest: state.checkpoint.digest().to_string(),
        num_classes: state.checkpoint.label_space().len(),
        dataset_version: state.checkpoint.metadata().dataset_version,
    })
}
