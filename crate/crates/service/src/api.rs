//! JSON-over-HTTP surface of the engine.
//!
//! Engine calls block (locks, disk, optional embedding service), so every
//! handler runs its call on the blocking pool.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use insight_core::drift::FlagStatus;
use insight_core::engine::{ErrorKind, ResolutionRequest};
use insight_core::model::{ActorRef, FlagId, Timestamp, TraceId, Violation};
use insight_core::regeneration::AuditQuestion;
use insight_core::store::{NodeId, Relation};
use insight_core::{Engine, EngineError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const DEFAULT_K: usize = 10;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/traces", post(capture))
        .route("/traces/{id}", get(trace))
        .route("/traces/{id}/lineage", get(lineage))
        .route("/traces/{id}/audit", get(audit))
        .route("/traces/{id}/revisions", post(revise))
        .route("/traces/{id}/feedback", post(feedback))
        .route("/traces/{id}/reuse", post(reuse))
        .route("/traces/{id}/redact", post(redact))
        .route("/traces/{id}/links", post(link))
        .route("/traces/{id}/alignment", post(alignment))
        .route("/references", post(ingest_reference))
        .route("/search", get(search))
        .route("/regenerate", get(regenerate))
        .route("/drift/scan", post(scan))
        .route("/drift/flags", get(flags))
        .route("/drift/flags/{id}", get(flag))
        .route("/drift/flags/{id}/resolution", post(resolve))
        .route("/metrics/entropy", get(entropy))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint") })
        .with_state(AppState { engine })
}

// ---- errors -------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.into(),
                message: message.into(),
                violations: Vec::new(),
            },
        }
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
        ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = status_of(e.kind());
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        let mut err = ApiError::new(status, e.code(), e.to_string());
        if let EngineError::Validation(v) = e {
            err.body.violations = v.violations;
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r {
            JsonRejection::JsonDataError(e) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
            }
            JsonRejection::MissingJsonContentType(e) => {
                ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type", e.body_text())
            }
            other => ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", other.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        let text = r.body_text();
        if text.contains("unknown field") {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_parameter", text)
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", text)
        }
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_path", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

// ---- extractors ---------------------------------------------------------

/// JSON body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(Body(v))
    }
}

pub struct Params<T>(pub T);

impl<S, T> FromRequestParts<S> for Params<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        let axum::extract::Query(v) = axum::extract::Query::<T>::from_request_parts(parts, state).await?;
        Ok(Params(v))
    }
}

pub struct Id<T>(pub T);

impl<S, T> FromRequestParts<S> for Id<T>
where
    S: Send + Sync,
    T: DeserializeOwned + Send,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        let axum::extract::Path(v) = axum::extract::Path::<T>::from_request_parts(parts, state).await?;
        Ok(Id(v))
    }
}

async fn run<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

// ---- request bodies -----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionBody {
    pub rationale: String,
    pub author: ActorRef,
    #[serde(default)]
    pub change_note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub endorsement: f64,
    pub actor: ActorRef,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReuseBody {
    pub reusing_trace_id: TraceId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactBody {
    pub actor: ActorRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBody {
    pub to_id: NodeId,
    pub relation: Relation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentBody {
    pub rendering: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBody {
    pub reference: String,
    pub content: String,
    #[serde(default)]
    pub linked_traces: Vec<TraceId>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    pub q: String,
    pub k: Option<usize>,
    pub as_of: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagParams {
    pub status: Option<FlagStatus>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditParams {
    /// Comma-separated question names; all questions when absent.
    pub questions: Option<String>,
}

// ---- responses ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub position: u64,
    pub pending_scores: usize,
    pub state_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub trace_id: TraceId,
    pub feedback_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReuseAck {
    pub trace_id: TraceId,
    pub reusing_trace_id: TraceId,
    pub reuse_count: u64,
}

// ---- handlers -----------------------------------------------------------

async fn health(State(s): State<AppState>) -> ApiResult<Json<Health>> {
    let h = run(&s, |e| {
        Ok(Health {
            status: "ok".into(),
            position: e.position(),
            pending_scores: e.pending_scores(),
            state_hash: e.state_hash(),
        })
    })
    .await?;
    Ok(Json(h))
}

async fn capture(
    State(s): State<AppState>,
    headers: HeaderMap,
    Body(raw): Body<insight_core::model::RawTrace>,
) -> ApiResult<Response> {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        None => None,
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid_header", "idempotency key must be visible ASCII"))?
                .to_string(),
        ),
    };
    let captured = run(&s, move |e| e.capture(raw, key)).await?;
    let status = if captured.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(captured.trace)).into_response())
}

async fn trace(State(s): State<AppState>, Id(id): Id<TraceId>) -> ApiResult<Response> {
    let view = run(&s, move |e| e.trace(id)).await?;
    Ok(Json(view).into_response())
}

async fn lineage(State(s): State<AppState>, Id(id): Id<TraceId>) -> ApiResult<Response> {
    let lineage = run(&s, move |e| e.lineage(id)).await?;
    Ok(Json(lineage).into_response())
}

pub fn parse_questions(list: Option<&str>) -> Result<Vec<AuditQuestion>, EngineError> {
    match list {
        None => Ok(AuditQuestion::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .map(|q| q.parse::<AuditQuestion>().map_err(EngineError::from))
            .collect(),
    }
}

async fn audit(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Params(p): Params<AuditParams>,
) -> ApiResult<Response> {
    let report = run(&s, move |e| {
        let questions = parse_questions(p.questions.as_deref())?;
        e.audit(id, &questions)
    })
    .await?;
    Ok(Json(report).into_response())
}

async fn revise(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<RevisionBody>,
) -> ApiResult<Response> {
    let version = run(&s, move |e| e.revise(id, b.rationale, b.author, b.change_note)).await?;
    Ok((StatusCode::CREATED, Json(version)).into_response())
}

async fn feedback(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<FeedbackBody>,
) -> ApiResult<Json<FeedbackAck>> {
    let mean = run(&s, move |e| e.record_feedback(id, b.endorsement, b.actor, b.note)).await?;
    Ok(Json(FeedbackAck {
        trace_id: id,
        feedback_mean: mean,
    }))
}

async fn reuse(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<ReuseBody>,
) -> ApiResult<Json<ReuseAck>> {
    let reusing = b.reusing_trace_id;
    let count = run(&s, move |e| e.record_reuse(id, reusing)).await?;
    Ok(Json(ReuseAck {
        trace_id: id,
        reusing_trace_id: reusing,
        reuse_count: count,
    }))
}

async fn redact(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<RedactBody>,
) -> ApiResult<Response> {
    let record = run(&s, move |e| e.redact(id, b.actor)).await?;
    Ok(Json(record).into_response())
}

async fn link(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<LinkBody>,
) -> ApiResult<Response> {
    let edge = run(&s, move |e| e.link(NodeId::from(id), b.to_id, b.relation)).await?;
    Ok((StatusCode::CREATED, Json(edge)).into_response())
}

async fn alignment(
    State(s): State<AppState>,
    Id(id): Id<TraceId>,
    Body(b): Body<AlignmentBody>,
) -> ApiResult<Response> {
    let check = run(&s, move |e| e.check_alignment(id, b.rendering)).await?;
    Ok(Json(check).into_response())
}

async fn ingest_reference(State(s): State<AppState>, Body(b): Body<ReferenceBody>) -> ApiResult<Response> {
    let rev = run(&s, move |e| e.ingest_reference(b.reference, b.content, b.linked_traces)).await?;
    Ok((StatusCode::CREATED, Json(rev)).into_response())
}

async fn search(State(s): State<AppState>, Params(p): Params<SearchParams>) -> ApiResult<Response> {
    let hits = run(&s, move |e| e.search(&p.q, p.k.unwrap_or(DEFAULT_K), p.as_of.map(Timestamp))).await?;
    Ok(Json(hits).into_response())
}

async fn regenerate(State(s): State<AppState>, Params(p): Params<SearchParams>) -> ApiResult<Response> {
    let bundle = run(&s, move |e| e.regenerate(&p.q, p.as_of.map(Timestamp), p.k.unwrap_or(DEFAULT_K))).await?;
    Ok(Json(bundle).into_response())
}

async fn scan(State(s): State<AppState>) -> ApiResult<Response> {
    let reports = run(&s, |e| e.scan_for_drift()).await?;
    Ok(Json(reports).into_response())
}

async fn flags(State(s): State<AppState>, Params(p): Params<FlagParams>) -> ApiResult<Response> {
    let flags = run(&s, move |e| Ok(e.flags(p.status))).await?;
    Ok(Json(flags).into_response())
}

async fn flag(State(s): State<AppState>, Id(id): Id<FlagId>) -> ApiResult<Response> {
    let report = run(&s, move |e| e.flag(id)).await?;
    Ok(Json(report).into_response())
}

async fn resolve(
    State(s): State<AppState>,
    Id(id): Id<FlagId>,
    Body(req): Body<ResolutionRequest>,
) -> ApiResult<Response> {
    let resolved = run(&s, move |e| e.resolve_flag(id, req)).await?;
    Ok(Json(resolved).into_response())
}

async fn entropy(State(s): State<AppState>) -> ApiResult<Response> {
    let report = run(&s, |e| Ok(e.entropy())).await?;
    Ok(Json(report).into_response())
}
