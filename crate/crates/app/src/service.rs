//! HTTP JSON API backing the annotation UI.
//!
//! Writes go through the store's write lock one at a time and are on disk
//! before the response is sent; reads share the lock between writes.
//! Suggestions use the read-only model and run on the blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use omner::corpus::Token;
use omner::pipeline::{NerModel, ScoredSpan};
use omner::schema::{write_conll, AnnotationRecord, SchemaError, Span, Status};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;

use crate::store::{Store, StoreError};

pub struct AppState {
    store: RwLock<Store>,
    model: Option<Arc<NerModel>>,
    suggestions: Mutex<HashMap<String, Vec<ScoredSpan>>>,
}

impl AppState {
    pub fn new(store: Store, model: Option<NerModel>) -> Arc<Self> {
        Arc::new(AppState {
            store: RwLock::new(store),
            model: model.map(Arc::new),
            suggestions: Mutex::new(HashMap::new()),
        })
    }

    /// Suggestions served so far, by sentence id.
    pub fn cached_suggestion(&self, sent_id: &str) -> Option<Vec<ScoredSpan>> {
        self.suggestions.lock().expect("cache lock").get(sent_id).cloned()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownSentence(_) => StatusCode::NOT_FOUND,
            StoreError::Invalid(SchemaError::StatusRegression { .. }) => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sentences", get(list_sentences))
        .route("/api/sentences/{id}", get(get_sentence))
        .route("/api/sentences/{id}/annotations/{annotator}", put(put_annotation))
        .route("/api/sentences/{id}/suggest", post(suggest))
        .route("/api/export", get(export))
        .route("/api/stats", get(stats))
        .with_state(state)
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Serialize)]
struct SentenceSummary<'a> {
    sent_id: &'a str,
    doc_id: &'a str,
    text: &'a str,
    status: Option<Status>,
}

const MAX_PAGE_SIZE: usize = 1000;

async fn list_sentences(State(state): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> ApiResult<Response> {
    // `unannotated` selects sentences without any annotation.
    let filter: Option<Option<Status>> = match q.status.as_deref() {
        None | Some("") => None,
        Some("unannotated") => Some(None),
        Some(s) => Some(Some(s.parse().map_err(|e: SchemaError| ApiError::bad_request(e.to_string()))?)),
    };
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(50);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!(
            "page must be >= 1 and page_size in 1..={MAX_PAGE_SIZE}"
        )));
    }
    let store = state.store.read().await;
    let matching: Vec<SentenceSummary> = store
        .sentences()
        .iter()
        .map(|s| SentenceSummary {
            sent_id: &s.sent_id,
            doc_id: &s.doc_id,
            text: &s.text,
            status: store.status(&s.sent_id),
        })
        .filter(|s| filter.is_none_or(|f| s.status == f))
        .collect();
    let total = matching.len();
    let items: Vec<_> = matching.into_iter().skip((page - 1) * page_size).take(page_size).collect();
    Ok(Json(json!({ "total": total, "page": page, "page_size": page_size, "items": items })).into_response())
}

#[derive(Serialize)]
struct SentenceDetail<'a> {
    sent_id: &'a str,
    doc_id: &'a str,
    text: &'a str,
    tokens: &'a [Token],
    status: Option<Status>,
    annotations: Vec<&'a AnnotationRecord>,
}

async fn get_sentence(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let store = state.store.read().await;
    let s = store.sentence(&id)?;
    let detail = SentenceDetail {
        sent_id: &s.sent_id,
        doc_id: &s.doc_id,
        text: &s.text,
        tokens: &s.tokens,
        status: store.status(&id),
        annotations: store.annotations(&id),
    };
    Ok(Json(detail).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationBody {
    spans: Vec<Span>,
    status: Status,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn put_annotation(
    State(state): State<Arc<AppState>>,
    Path((id, annotator)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<AnnotationRecord>> {
    let body: AnnotationBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid annotation body: {e}")))?;
    if annotator.trim().is_empty() {
        return Err(ApiError::bad_request("annotator id must not be empty"));
    }
    let mut store = state.store.write().await;
    let record = store.put_annotation(&id, &annotator, &body.spans, body.status, now_ms())?;
    Ok(Json(record))
}

async fn suggest(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let model = state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    let norms = state.store.read().await.sentence(&id)?.norms();
    let spans = tokio::task::spawn_blocking(move || model.predict_sentence(&norms))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    state.suggestions.lock().expect("cache lock").insert(id, spans.clone());
    Ok(Json(json!({ "spans": spans })).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
    annotator: Option<String>,
}

async fn export(State(state): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    match q.format.as_deref() {
        None | Some("conll") => {}
        Some(other) => return Err(ApiError::bad_request(format!("unsupported export format {other:?}"))),
    }
    let annotator = q.annotator.as_deref().filter(|a| !a.is_empty());
    let data = state.store.read().await.export(annotator)?;
    let mut out = Vec::new();
    write_conll(&mut out, &data).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], out).into_response())
}

async fn stats(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(Json(state.store.read().await.stats()?).into_response())
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
