use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gist_core::corpus::encode_png;
use gist_core::ImageRecord;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{create_session, score_session, Ack, BlindTestReport, ImageRef, Label, SessionConfig};
use crate::store::SessionStore;
use crate::BlindTestError;

/// Header set on images that belong to the disclosed orientation set.
pub const ORIENTATION_HEADER: &str = "x-gist-orientation";

/// Shared state behind the router.
pub struct AppState {
    pub store: SessionStore,
    pub real_pool: Vec<ImageRecord>,
    pub synth_pool: Vec<ImageRecord>,
    /// Sizes used for fields a create request leaves out.
    pub defaults: SessionConfig,
}

impl IntoResponse for BlindTestError {
    fn into_response(self) -> Response {
        let status = match &self {
            BlindTestError::UnknownSession(_) | BlindTestError::UnknownItem(_) => StatusCode::NOT_FOUND,
            BlindTestError::DuplicateResponse(_) | BlindTestError::SessionComplete | BlindTestError::DuplicateSession(_) => {
                StatusCode::CONFLICT
            }
            BlindTestError::SessionIncomplete { .. } => StatusCode::FORBIDDEN,
            BlindTestError::PoolTooSmall { .. } | BlindTestError::EmptySession => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, BlindTestError>;

/// Create-session body; omitted fields take the server defaults, and an
/// omitted seed is drawn from OS entropy.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub n_real: Option<usize>,
    pub n_synth: Option<usize>,
    pub n_orientation: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub n_items: usize,
    pub orientation_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextResponse {
    Item { item_id: String, index: usize, total: usize },
    Done { complete: bool },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRequest {
    pub item_id: String,
    pub label: Label,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/items/{item_id}/image", get(image))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/report", get(report))
        .with_state(state)
}

async fn create(State(st): State<Arc<AppState>>, body: Option<Json<CreateRequest>>) -> ApiResult<Json<CreateResponse>> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let config = SessionConfig {
        n_real: req.n_real.unwrap_or(st.defaults.n_real),
        n_synth: req.n_synth.unwrap_or(st.defaults.n_synth),
        n_orientation: req.n_orientation.unwrap_or(st.defaults.n_orientation),
        seed: req.seed.unwrap_or_else(rand::random),
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let session = create_session(uuid::Uuid::new_v4().simple().to_string(), &st.real_pool, &st.synth_pool, config, now)?;
    let resp = CreateResponse {
        session_id: session.session_id.clone(),
        n_items: session.items.len(),
        orientation_ids: session.orientation.iter().map(|o| o.item_id.clone()).collect(),
    };
    st.store.insert(session)?;
    Ok(Json(resp))
}

async fn image(State(st): State<Arc<AppState>>, Path((id, item_id)): Path<(String, String)>) -> ApiResult<Response> {
    let entry = st.store.get(&id)?;
    let (target, orientation) = {
        let e = entry.lock().unwrap();
        let target = e.session.image_ref(&item_id).ok_or_else(|| BlindTestError::UnknownItem(item_id.clone()))?;
        (target, e.session.is_orientation(&item_id))
    };
    let rec = match target {
        ImageRef::Real(i) => &st.real_pool[i],
        ImageRef::Synthetic(i) => &st.synth_pool[i],
    };
    let png = encode_png(&rec.pixels)?;
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
    if orientation {
        resp.headers_mut().insert(ORIENTATION_HEADER, HeaderValue::from_static("true"));
    }
    Ok(resp)
}

async fn next(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<NextResponse>> {
    let entry = st.store.get(&id)?;
    let e = entry.lock().unwrap();
    Ok(Json(match e.session.next_item() {
        Some((index, it)) => NextResponse::Item { item_id: it.item_id.clone(), index, total: e.session.items.len() },
        None => NextResponse::Done { complete: true },
    }))
}

async fn respond(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ResponseRequest>,
) -> ApiResult<Json<Ack>> {
    let entry = st.store.get(&id)?;
    let ack = entry.lock().unwrap().respond(&req.item_id, req.label)?;
    Ok(Json(ack))
}

async fn report(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<BlindTestReport>> {
    let entry = st.store.get(&id)?;
    let e = entry.lock().unwrap();
    Ok(Json(score_session(&e.session)?))
}
