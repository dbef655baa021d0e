//! HTTP routing gateway: accepts completion requests from editor plugins,
//! routes each through the configured router and returns the chosen
//! completion with its decision telemetry.

pub mod config;
pub mod metrics;

use std::fs::File;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use fimroute::backend::{Backend, GenerationParams};
use fimroute::model::{Completion, FimTask, Language, RouteDecision, Subtype};
use fimroute::routers::Router;
use fimroute::syntax::{SyntaxGate, SyntaxStatus};
use fimroute::{BackendError, Error};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub use config::GatewayConfig;
pub use metrics::{Metrics, MetricsSnapshot};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stand-in for an unconfigured remote; every call fails.
struct Unconfigured;

impl Backend for Unconfigured {
    fn model_id(&self) -> &str {
        "unconfigured"
    }

    fn generate(&self, _task: &FimTask, _params: &GenerationParams) -> fimroute::Result<Completion> {
        Err(Error::Backend(BackendError {
            backend: "remote".into(),
            message: "no remote backend configured".into(),
            retry_safe: false,
        }))
    }
}

/// Shared, immutable service state.
#[derive(Clone)]
pub struct AppState {
    pub router: Arc<Router>,
    pub local: Arc<dyn Backend>,
    pub remote: Arc<dyn Backend>,
    pub gate: Arc<SyntaxGate>,
    pub metrics: Arc<Metrics>,
    limiter: Arc<Semaphore>,
    token: Option<Arc<str>>,
    decision_log: Option<Arc<parking_lot::Mutex<File>>>,
}

impl AppState {
    pub fn new(
        router: Router,
        local: Arc<dyn Backend>,
        remote: Option<Arc<dyn Backend>>,
        gate: SyntaxGate,
        concurrency_limit: usize,
    ) -> Self {
        AppState {
            router: Arc::new(router),
            local,
            remote: remote.unwrap_or_else(|| Arc::new(Unconfigured)),
            gate: Arc::new(gate),
            metrics: Arc::new(Metrics::default()),
            limiter: Arc::new(Semaphore::new(concurrency_limit.max(1))),
            token: None,
            decision_log: None,
        }
    }

    /// Requires `Authorization: Bearer <token>` on completion requests.
    pub fn with_token(mut self, token: impl Into<Arc<str>>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_decision_log(mut self, file: File) -> Self {
        self.decision_log = Some(Arc::new(parking_lot::Mutex::new(file)));
        self
    }

    /// Builds everything a config file describes.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let (router_config, calibration) = config.resolve_calibration()?;
        let mut router_config = router_config;
        router_config.serve_local_on_remote_failure = true;
        let router = Router::new(router_config, calibration.and_then(|c| c.trained))?;
        let local = config.local.build()?;
        let remote = config.remote.as_ref().map(|r| r.build()).transpose()?;
        let gate = SyntaxGate::uncached(Arc::new(config.registry()?));
        let mut state = AppState::new(router, local, remote, gate, config.concurrency_limit);
        if let Some(var) = &config.auth_token_env {
            let token = std::env::var(var)
                .map_err(|_| GatewayError::Config(format!("environment variable `{var}` is not set")))?;
            state = state.with_token(token);
        }
        if let Some(path) = &config.decision_log {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| GatewayError::Config(format!("opening {}: {e}", path.display())))?;
            state = state.with_decision_log(file);
        }
        Ok(state)
    }
}

pub fn app(state: AppState) -> axum::Router {
    axum::Router::new()
        .route("/v1/fim/complete", post(complete))
        .route("/healthz", get(healthz))
        .route("/metrics", get(metrics_text))
        .with_state(state)
}

/// Binds `config.listen` and serves until Ctrl-C.
pub async fn serve(config: GatewayConfig) -> Result<(), GatewayError> {
    let state = tokio::task::spawn_blocking({
        let config = config.clone();
        move || AppState::from_config(&config)
    })
    .await
    .map_err(|e| GatewayError::Config(format!("startup task failed: {e}")))??;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, policy = %state.router.policy(), "gateway listening");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub local: f64,
    pub gate: f64,
    pub remote: f64,
    pub total: f64,
    /// Total minus model calls and gate.
    pub overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
    pub kept_local: bool,
    pub reason: String,
    /// Model that produced `text`.
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syntax_valid: Option<bool>,
    /// A backend was unavailable and the other one answered.
    pub degraded: bool,
    pub latency: LatencyBreakdown,
}

struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn bad_request(field: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field),
        }
    }

    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, field: &'static str) -> Result<String, ApiError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ApiError::bad_request(field, format!("field `{field}` must be a string"))),
        None => Err(ApiError::bad_request(field, format!("missing field `{field}`"))),
    }
}

/// Parses a request body into a task; errors name the offending field.
pub fn parse_request(body: &[u8]) -> Result<FimTask, (&'static str, String)> {
    into_task(body).map_err(|e| (e.field.unwrap_or("body"), e.message))
}

fn into_task(body: &[u8]) -> Result<FimTask, ApiError> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request("body", format!("request body is not valid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::bad_request("body", "request body must be a JSON object"));
    };
    let prefix = required_str(&obj, "prefix")?;
    let suffix = required_str(&obj, "suffix")?;
    let language = required_str(&obj, "language")?;
    if language.trim().is_empty() {
        return Err(ApiError::bad_request("language", "field `language` must not be empty"));
    }
    let mut task = FimTask::new("", Language::from(language), prefix, suffix);
    task.subtype = match obj.get("subtype") {
        None | Some(Value::Null) => None,
        Some(v @ Value::String(_)) => Some(
            serde_json::from_value::<Subtype>(v.clone())
                .map_err(|_| ApiError::bad_request("subtype", "field `subtype` must be one of single-line, control, block, api"))?,
        ),
        Some(_) => return Err(ApiError::bad_request("subtype", "field `subtype` must be a string")),
    };
    task.id = match obj.get("id") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ApiError::bad_request("id", "field `id` must be a string")),
    };
    Ok(task)
}

fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Argument(_) => StatusCode::BAD_REQUEST,
        Error::MissingRecord { .. } => StatusCode::NOT_FOUND,
        Error::Backend(_) => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(token) = &state.token else {
        return true;
    };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == &**token)
}

async fn complete(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let result = handle(&state, &headers, &body, started).await;
    match result {
        Ok(resp) => Json(resp).into_response(),
        Err(err) => {
            state.metrics.record_failure(err.status.as_u16());
            err.into_response()
        }
    }
}

async fn handle(state: &AppState, headers: &HeaderMap, body: &[u8], started: Instant) -> Result<CompleteResponse, ApiError> {
    if !authorized(state, headers) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token"));
    }
    let mut task = into_task(body)?;
    let policy = state.router.policy();
    if policy.uses_gate() && !state.gate.registry().supports(&task.language) {
        return Err(ApiError::bad_request(
            "language",
            format!(
                "no syntax checker registered for language `{}` (checker registry: {})",
                task.language,
                state.gate.registry().languages().join(", ")
            ),
        ));
    }
    if task.id.is_empty() {
        task.id = format!("req-{}", fimroute::synth::stable_hash(0, &format!("{}\u{0}{}", task.prefix, task.suffix)));
    }
    let _permit = state
        .limiter
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "gateway is shutting down"))?;
    let routed = {
        let state = state.clone();
        let task = task.clone();
        run_blocking(move || state.router.route(&task, &*state.local, &*state.remote, &state.gate)).await?
    };
    let decision = routed.map_err(|e| {
        tracing::warn!(error = %e, "routing failed");
        ApiError::new(status_for(&e), e.to_string())
    })?;
    Ok(respond(state, &task, decision, started))
}

/// Runs blocking routing work in place on a multi-threaded runtime, which
/// avoids a thread handoff per request, and on the blocking pool otherwise.
async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    if tokio::runtime::Handle::current().runtime_flavor() == tokio::runtime::RuntimeFlavor::MultiThread {
        return Ok(tokio::task::block_in_place(f));
    }
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("routing task failed: {e}")))
}

fn respond(state: &AppState, task: &FimTask, d: RouteDecision, started: Instant) -> CompleteResponse {
    let total = started.elapsed().as_secs_f64();
    let overhead = (total - d.latency_local - d.latency_gate - d.latency_remote).max(0.0);
    let syntax = d.syntax_verdict.as_ref().map(|v| v.status);
    let checker_error = syntax == Some(SyntaxStatus::CheckerError);
    let degraded = matches!(
        d.reason,
        fimroute::model::RouteReason::LocalUnavailable | fimroute::model::RouteReason::RemoteUnavailable
    );
    state.metrics.record_decision(
        d.kept_local,
        d.reason,
        checker_error,
        &metrics::Latencies {
            total,
            overhead,
            local: d.latency_local,
            gate: d.latency_gate,
            remote: d.latency_remote,
        },
    );
    let resp = CompleteResponse {
        text: d.final_completion.text,
        kept_local: d.kept_local,
        reason: d.reason.as_str().to_owned(),
        model: d.final_completion.model_id,
        confidence: d.confidence,
        syntax_valid: d.syntax_verdict.as_ref().map(|v| v.is_valid()),
        degraded,
        latency: LatencyBreakdown {
            local: d.latency_local,
            gate: d.latency_gate,
            remote: d.latency_remote,
            total,
            overhead,
        },
    };
    if let Some(log) = &state.decision_log {
        let line = json!({
            "task_id": task.id,
            "language": task.language.as_str(),
            "kept_local": resp.kept_local,
            "reason": resp.reason,
            "model": resp.model,
            "confidence": resp.confidence,
            "syntax_valid": resp.syntax_valid,
            "syntax": syntax,
            "latency": resp.latency,
        });
        let mut f = log.lock();
        let _ = writeln!(f, "{line}");
    }
    resp
}

async fn healthz(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "policy": state.router.policy().as_str(),
        "local": state.local.model_id(),
        "remote": state.remote.model_id(),
    }))
}

async fn metrics_text(State(state): State<AppState>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        state.metrics.render(),
    )
}
