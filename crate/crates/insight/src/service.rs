//! JSON-over-HTTP surface: onboarding, querying and health.
//!
//! | route              | who                           |
//! |--------------------|-------------------------------|
//! | `GET /v1/health`   | anyone                        |
//! | `GET /v1/datasets` | any authenticated principal   |
//! | `POST /v1/datasets`| principals with the admin role|
//! | `POST /v1/query`   | roles allowed by the policy   |

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};

use crate::config::{Principal, ServiceConfig};
use crate::pipeline::{OnboardError, OnboardRequest, Pipeline, QueryError, QueryRequest};

/// Dataset id to the roles allowed to query it. A dataset without an entry
/// is closed to everyone but admins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessPolicy(pub BTreeMap<String, BTreeSet<String>>);

impl AccessPolicy {
    pub fn allows(&self, principal: &Principal, dataset_id: &str) -> bool {
        self.0.get(dataset_id).is_some_and(|allowed| !allowed.is_disjoint(&principal.roles))
    }

    pub fn grant(&mut self, dataset_id: &str, roles: impl IntoIterator<Item = String>) {
        self.0.entry(dataset_id.to_string()).or_default().extend(roles);
    }
}

pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub tokens: BTreeMap<String, Principal>,
    pub admin_role: String,
    pub policy: RwLock<AccessPolicy>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, config: &ServiceConfig) -> Self {
        Self {
            pipeline,
            tokens: config.tokens.clone(),
            admin_role: config.admin_role.clone(),
            policy: RwLock::new(AccessPolicy(config.policy.clone())),
        }
    }

    fn is_admin(&self, p: &Principal) -> bool {
        p.roles.contains(&self.admin_role)
    }

    fn may_query(&self, p: &Principal, dataset_id: &str) -> bool {
        self.is_admin(p) || self.policy.read().unwrap().allows(p, dataset_id)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/datasets", get(list_datasets).post(onboard))
        .route("/v1/query", post(query))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    body: JsonValue,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl ToString) -> Self {
        Self { status, body: json!({ "error": kind, "message": message.to_string() }) }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.body[key] = serde_json::to_value(value).unwrap_or(JsonValue::Null);
        self
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "access denied")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<Principal, ApiError> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(ApiError::unauthorized)?;
    state.tokens.get(token.trim()).cloned().ok_or_else(ApiError::unauthorized)
}

fn log_request(route: &str, user: Option<&str>, dataset: Option<&str>, status: StatusCode, started: Instant, timings: Option<&JsonValue>) {
    let line = json!({
        "route": route,
        "user": user,
        "dataset": dataset,
        "status": status.as_u16(),
        "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
        "timings": timings,
    });
    tracing::info!(target: "insight::request", "{line}");
}

async fn health(State(state): State<Arc<AppState>>) -> Json<crate::pipeline::Health> {
    Json(state.pipeline.health())
}

async fn list_datasets(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<Json<Vec<String>>, ApiError> {
    let p = authenticate(&state, &headers)?;
    let visible = state.pipeline.dataset_ids().into_iter().filter(|d| state.may_query(&p, d)).collect();
    Ok(Json(visible))
}

#[derive(Debug, Deserialize)]
struct OnboardBody {
    #[serde(flatten)]
    request: OnboardRequest,
    /// Roles granted query access to the new dataset.
    #[serde(default)]
    allowed_roles: Vec<String>,
}

async fn onboard(State(state): State<Arc<AppState>>, headers: HeaderMap, Json(body): Json<OnboardBody>) -> Response {
    let started = Instant::now();
    let principal = match authenticate(&state, &headers) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    let dataset = body.request.dataset_id.clone();
    if !state.is_admin(&principal) {
        log_request("onboard", Some(&principal.user_id), None, StatusCode::FORBIDDEN, started, None);
        return ApiError::forbidden().into_response();
    }
    let pipeline = state.pipeline.clone();
    let request = body.request;
    let outcome = tokio::task::spawn_blocking(move || pipeline.onboard(request)).await;
    let response = match outcome {
        Ok(Ok(summary)) => {
            state.policy.write().unwrap().grant(&dataset, body.allowed_roles);
            (StatusCode::CREATED, Json(summary)).into_response()
        }
        Ok(Err(e)) => onboard_error(e).into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e).into_response(),
    };
    log_request("onboard", Some(&principal.user_id), Some(&dataset), response.status(), started, None);
    response
}

fn onboard_error(e: OnboardError) -> ApiError {
    match e {
        OnboardError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", &e),
        OnboardError::Examples(ref diags) => {
            let diags = diags.clone();
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_examples", &e).with("diagnostics", diags)
        }
        OnboardError::Invalid(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", &e),
        OnboardError::Embed(_) => ApiError::new(StatusCode::BAD_GATEWAY, "embedding_failed", &e),
    }
}

async fn query(State(state): State<Arc<AppState>>, headers: HeaderMap, Json(req): Json<QueryRequest>) -> Response {
    let started = Instant::now();
    let principal = match authenticate(&state, &headers) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    // the policy is consulted before anything reveals whether the dataset exists
    if !state.may_query(&principal, &req.dataset_id) {
        log_request("query", Some(&principal.user_id), None, StatusCode::FORBIDDEN, started, None);
        return ApiError::forbidden().into_response();
    }
    let pipeline = state.pipeline.clone();
    let dataset = req.dataset_id.clone();
    let outcome = tokio::task::spawn_blocking(move || pipeline.answer(&req)).await;
    let (response, timings) = match outcome {
        Ok(Ok(resp)) => {
            let t = serde_json::to_value(resp.timings).ok();
            ((StatusCode::OK, Json(resp)).into_response(), t)
        }
        Ok(Err(e)) => {
            let t = match &e {
                QueryError::Rejected { timings, .. } => serde_json::to_value(timings).ok(),
                _ => None,
            };
            (query_error(e).into_response(), t)
        }
        Err(e) => (ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e).into_response(), None),
    };
    log_request("query", Some(&principal.user_id), Some(&dataset), response.status(), started, timings.as_ref());
    response
}

fn query_error(e: QueryError) -> ApiError {
    let sql = e.sql().map(str::to_string);
    match e {
        QueryError::UnknownDataset(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_dataset", &e),
        QueryError::Rejected { ref verdict, ref timings, .. } => {
            let (verdict, timings) = (verdict.clone(), *timings);
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "sanitizer_rejected", &e)
                .with("sql", sql)
                .with("verdict", verdict)
                .with("timings", timings)
        }
        QueryError::Timeout { .. } => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", &e).with("sql", sql),
        QueryError::Execution { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "execution_failed", &e).with("sql", sql),
        QueryError::Prompt(_) => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", &e),
        QueryError::Generation(_) | QueryError::Consensus(_) => ApiError::new(StatusCode::BAD_GATEWAY, "generation_failed", &e),
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listen: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
