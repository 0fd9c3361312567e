//! HTTP API and static frontend.
//!
//! Every API route takes the magic-link token as the `token` query
//! parameter. Annotator tokens reach `/api/next` and `/api/submit`; manager
//! tokens reach the dashboard, results, redistribution and export. All API
//! responses are JSON and carry `Cache-Control: no-store`.

pub mod payload;

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pearmut_core::assignment::AssignmentError;
use pearmut_core::store::{NextItem, Store, StoreError, Submission};
use serde::Deserialize;
use serde_json::json;

use payload::{alias_map, item_payload, NextPayload, RedistributeRequest, SubmitRequest};

const INDEX_HTML: &str = include_str!("../assets/index.html");
const APP_JS: &str = include_str!("../assets/app.js");
const STYLE_CSS: &str = include_str!("../assets/style.css");

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            StoreError::UnknownToken => (S::UNAUTHORIZED, "unknown_token"),
            StoreError::Forbidden(_) => (S::FORBIDDEN, "forbidden"),
            StoreError::NotFound(_) => (S::NOT_FOUND, "not_found"),
            StoreError::DuplicateCampaign(_) => (S::CONFLICT, "duplicate_campaign"),
            StoreError::Campaign(_) | StoreError::Record(_) => (S::UNPROCESSABLE_ENTITY, "invalid"),
            StoreError::Assignment(a) => match a {
                AssignmentError::Duplicate { .. } => (S::CONFLICT, "duplicate_submission"),
                AssignmentError::NotAssigned { .. } => (S::CONFLICT, "not_assigned"),
                AssignmentError::UnknownUser(_) => (S::FORBIDDEN, "forbidden"),
                AssignmentError::Unsupported(_) => (S::UNPROCESSABLE_ENTITY, "unsupported_mode"),
                AssignmentError::Config(_) | AssignmentError::Invalid(_) => (S::UNPROCESSABLE_ENTITY, "invalid"),
            },
            StoreError::ReadOnly => (S::SERVICE_UNAVAILABLE, "read_only"),
            StoreError::Io { .. } | StoreError::Corrupt { .. } | StoreError::Replay { .. } | StoreError::Locked(_) => {
                tracing::error!(error = %e, "storage failure");
                (S::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

impl TokenQuery {
    fn token(self) -> Result<String, ApiError> {
        self.token
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing_token", "the token query parameter is required"))
    }
}

/// Runs store work off the async workers: writes wait for a disk sync.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn session(State(app): State<AppState>, Query(q): Query<TokenQuery>) -> ApiResult<serde_json::Value> {
    let s = app.store.session(&q.token()?)?;
    Ok(Json(json!({"campaign_id": s.campaign_id, "user_id": s.user_id, "role": s.role})))
}

async fn next(State(app): State<AppState>, Query(q): Query<TokenQuery>) -> ApiResult<NextPayload> {
    let token = q.token()?;
    let next = blocking(move || app.store.next_item(&token).map_err(ApiError::from)).await?;
    Ok(Json(match next {
        NextItem::Item { definition, item, .. } => NextPayload::Item(Box::new(item_payload(&definition, &item))),
        NextItem::Complete {
            verdict,
            token,
            progress,
            ..
        } => NextPayload::Complete {
            verdict,
            token,
            progress,
        },
    }))
}

async fn submit(
    State(app): State<AppState>,
    Query(q): Query<TokenQuery>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<pearmut_core::store::SubmitOutcome> {
    let token = q.token()?;
    let Json(request) = body?;
    let outcome = blocking(move || {
        let order = app.store.submittable_models(&token, request.document_index)?;
        let aliases = alias_map(&order);
        let mut annotations = std::collections::BTreeMap::new();
        for (alias, annotation) in request.annotations {
            let model = aliases.get(&alias).ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "invalid",
                    format!("unknown output `{alias}` for document {}", request.document_index),
                )
            })?;
            annotations.insert(model.clone(), annotation);
        }
        let submission = Submission {
            document_index: request.document_index,
            annotations,
            skip_tutorial: request.skip_tutorial,
        };
        app.store.submit(&token, submission).map_err(ApiError::from)
    })
    .await?;
    Ok(Json(outcome))
}

async fn dashboard(
    State(app): State<AppState>,
    Query(q): Query<TokenQuery>,
) -> ApiResult<pearmut_core::store::Dashboard> {
    Ok(Json(app.store.dashboard(&q.token()?)?))
}

async fn results(State(app): State<AppState>, Query(q): Query<TokenQuery>) -> ApiResult<pearmut_core::store::Results> {
    let token = q.token()?;
    let results = blocking(move || app.store.reveal_results(&token).map_err(ApiError::from)).await?;
    Ok(Json(results))
}

async fn redistribute(
    State(app): State<AppState>,
    Query(q): Query<TokenQuery>,
    body: Result<Json<RedistributeRequest>, JsonRejection>,
) -> ApiResult<pearmut_core::store::Redistribution> {
    let token = q.token()?;
    let Json(r) = body?;
    let moved = blocking(move || {
        app.store
            .redistribute(&token, &r.from_user, &r.to_user, r.start, r.end)
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(moved))
}

async fn export(State(app): State<AppState>, Query(q): Query<TokenQuery>) -> Result<Response, ApiError> {
    let token = q.token()?;
    let campaign = app.store.session(&token)?.campaign_id;
    let body = app.store.export(&token)?;
    let disposition = format!("attachment; filename=\"{campaign}.json\"");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/json")),
            (
                header::CONTENT_DISPOSITION,
                HeaderValue::from_str(&disposition).unwrap_or(HeaderValue::from_static("attachment")),
            ),
        ],
        body,
    )
        .into_response())
}

async fn healthz(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "campaigns": app.store.campaign_ids().len(),
    }))
}

fn asset(content_type: &'static str, body: &'static str) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn no_store(request: axum::extract::Request, next: Next) -> Response {
    let mut response = next.run(request).await;
    response
        .headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    response
}

pub fn router(store: Arc<Store>) -> Router {
    let api = Router::new()
        .route("/session", get(session))
        .route("/next", get(next))
        .route("/submit", post(submit))
        .route("/dashboard", get(dashboard))
        .route("/results", post(results))
        .route("/redistribute", post(redistribute))
        .route("/export", get(export))
        .fallback(api_not_found)
        .layer(middleware::from_fn(no_store));
    Router::new()
        .nest("/api", api)
        .route("/healthz", get(healthz))
        .route("/", get(|| async { asset("text/html; charset=utf-8", INDEX_HTML) }))
        .route("/app.js", get(|| async { asset("text/javascript; charset=utf-8", APP_JS) }))
        .route("/style.css", get(|| async { asset("text/css; charset=utf-8", STYLE_CSS) }))
        .with_state(AppState { store })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
}
