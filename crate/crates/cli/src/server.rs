//! JSON API for annotation sessions.
//!
//! Views never carry ŷ, the gold label or the explainer name; those only
//! surface in the report once a session is complete.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use commexp::annotation::{session_agreement, SessionStore};
use commexp::Error;

use crate::exit::ErrorClass;

#[derive(Clone)]
struct AppState {
    store: Arc<SessionStore>,
    writes: Arc<Mutex<()>>,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let class = ErrorClass::of(&self.0);
        let status =
            StatusCode::from_u16(class.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({ "error": class.name(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct AnswerBody {
    pub item: String,
    pub label: String,
    #[serde(default)]
    pub unsure: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerAck {
    pub item: String,
    pub answered: usize,
    pub total: usize,
    pub complete: bool,
}

#[derive(Debug, Deserialize)]
pub struct AgreementQuery {
    pub a: String,
    pub b: String,
}

pub fn router(store: SessionStore) -> Router {
    let state = AppState {
        store: Arc::new(store),
        writes: Arc::new(Mutex::new(())),
    };
    Router::new()
        .route("/sessions", get(list))
        .route("/session/{id}", get(view))
        .route("/session/{id}/answer", post(answer))
        .route("/session/{id}/report", get(report))
        .route("/agreement", get(agreement))
        .with_state(state)
}

async fn list(State(st): State<AppState>) -> ApiResult<serde_json::Value> {
    Ok(Json(json!({ "sessions": st.store.ids()? })))
}

async fn view(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<commexp::annotation::SessionView> {
    Ok(Json(st.store.load(&id)?.view()))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn answer(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: std::result::Result<Json<AnswerBody>, JsonRejection>,
) -> ApiResult<AnswerAck> {
    let Json(body) = body.map_err(|e| Error::Format(format!("answer body: {}", e.body_text())))?;
    let _guard = st.writes.lock().await;
    let mut session = st.store.load(&id)?;
    let entry = session.answer(&body.item, &body.label, body.unsure, now_ms())?;
    st.store.append(&entry)?;
    Ok(Json(AnswerAck {
        item: entry.item,
        answered: session.answers.len(),
        total: session.items.len(),
        complete: session.is_complete(),
    }))
}

async fn report(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<commexp::annotation::SessionReport> {
    Ok(Json(st.store.load(&id)?.report()?))
}

async fn agreement(
    State(st): State<AppState>,
    q: std::result::Result<Query<AgreementQuery>, QueryRejection>,
) -> ApiResult<commexp::game::Agreement> {
    let Query(q) = q.map_err(|e| Error::Config(format!("agreement query: {}", e.body_text())))?;
    let a = st.store.load(&q.a)?;
    let b = st.store.load(&q.b)?;
    Ok(Json(session_agreement(&a, &b)?))
}
