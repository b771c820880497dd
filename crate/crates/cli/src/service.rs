//! JSON-over-HTTP what-if service.
//!
//! Each session holds a network, the evidence entered so far, optional term
//! weights and a master seed. Every computation is a pure function of that
//! state and the request parameters, so repeated requests return identical
//! bodies.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promo_bn::inference::{
    analytic_mean, discrete_posterior_exact, equation_mean_ci, forward_sample, posterior, reweight,
    target_equation, DensityMethod, Evidence, InferenceError, MeanCi, DEFAULT_BANDWIDTH,
    DEFAULT_ITERATIONS,
};
use promo_bn::{parse_network, serialize_network, Network, NodeKind, PosteriorReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "PROMO_BN_PORT";
pub const DEFAULT_SEED: u64 = 42;
pub const HISTOGRAM_BINS: usize = 50;
pub const MAX_FORECAST_ITERATIONS: usize = 1_000_000;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("unknown session `{id}`"),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        let status = match e {
            InferenceError::UndefinedPosterior { .. } | InferenceError::InconsistentEvidence => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Relative weights of the three `Choose` terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub price: f64,
    pub promotions: f64,
    pub location: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub bins: usize,
    pub min: f64,
    pub max: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins spanning the sample range.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            max = min + 1.0;
        }
        let width = (max - min) / bins as f64;
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - min) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram {
            bins,
            min,
            max,
            width,
            counts,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastSummary {
    pub node: String,
    pub n: usize,
    pub seed: u64,
    pub mean: f64,
    pub sd: f64,
    pub ci: MeanCi,
    pub analytic_mean: Option<f64>,
    pub histogram: Histogram,
}

pub struct Session {
    base: Network,
    active: Network,
    weights: Option<Weights>,
    evidence: Evidence,
    seed: u64,
    last_posterior: Option<PosteriorReport>,
    last_forecast: Option<ForecastSummary>,
}

impl Session {
    pub fn new(network: Network, seed: u64) -> Self {
        Session {
            active: network.clone(),
            base: network,
            weights: None,
            evidence: Evidence::none(),
            seed,
            last_posterior: None,
            last_forecast: None,
        }
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn insert(&self, session: Session) -> String {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        self.sessions
            .lock()
            .expect("session map")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router() -> Router {
    router_with_state(Arc::new(AppState::default()))
}

pub fn router_with_state(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/network", get(get_network))
        .route(
            "/sessions/{id}/evidence",
            post(add_evidence).delete(clear_evidence).get(get_evidence),
        )
        .route("/sessions/{id}/posteriors", get(get_posteriors))
        .route("/sessions/{id}/forecast", get(get_forecast))
        .route("/sessions/{id}/weights", post(set_weights))
        .with_state(state)
}

/// Port from `PROMO_BN_PORT`, falling back to 8080.
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{PORT_ENV}={v} is not a valid port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub async fn serve(port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Runs a session computation off the async executor while holding the
/// session lock.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    let session = state.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut guard = session.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard).map(Json)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

fn query_params<T>(query: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    query
        .map(|Query(q)| q)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b)
        .map_err(|e| ApiError::bad_request(format!("malformed body: {}", e.body_text())))
}

fn describe_network(net: &Network) -> Value {
    let nodes: Vec<Value> = net
        .nodes()
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "kind": n.kind_name(),
                "parents": n.parents,
                "states": n.states(),
            })
        })
        .collect();
    json!({ "name": net.name(), "nodes": nodes })
}

fn discrete_states(net: &Network) -> serde_json::Map<String, Value> {
    net.discrete_nodes()
        .map(|n| (n.id.clone(), json!(n.states())))
        .collect()
}

#[derive(Deserialize)]
struct CreateQuery {
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct DslBody {
    dsl: String,
    seed: Option<u64>,
}

/// Accepts the network text either as the raw body or as `{"dsl": ...}`.
async fn create_session(
    State(state): State<Arc<AppState>>,
    query: Result<Query<CreateQuery>, QueryRejection>,
    headers: HeaderMap,
    body: String,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let query = query_params(query)?;
    let is_json = headers
        .get(axum::http::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let (text, body_seed) = if is_json {
        let parsed: DslBody = serde_json::from_str(&body)
            .map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
        (parsed.dsl, parsed.seed)
    } else {
        (body, None)
    };
    let net =
        parse_network(&text).map_err(|e| ApiError::bad_request(format!("parse error at {e}")))?;
    target_equation(&net)?;
    let seed = body_seed.or(query.seed).unwrap_or(DEFAULT_SEED);
    let nodes: Vec<&str> = net.nodes().iter().map(|n| n.id.as_str()).collect();
    let body = json!({
        "network": net.name(),
        "nodes": nodes,
        "states": discrete_states(&net),
        "seed": seed,
    });
    let id = state.insert(Session::new(net, seed));
    let mut body = body;
    body["session_id"] = json!(id);
    Ok((StatusCode::CREATED, Json(body)))
}

/// Evidence, weights, seed and the most recent posterior and forecast.
async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Value> {
    let key = id.clone();
    with_session(&state, &id, move |s| {
        Ok(json!({
            "session_id": key,
            "network": s.active.name(),
            "seed": s.seed,
            "weights": s.weights,
            "evidence": s.evidence,
            "last_posterior": s.last_posterior,
            "last_forecast": s.last_forecast,
        }))
    })
    .await
}

async fn get_network(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Value> {
    with_session(&state, &id, |s| {
        let mut body = describe_network(&s.active);
        body["dsl"] = json!(serialize_network(&s.active));
        body["weights"] = json!(s.weights);
        body["seed"] = json!(s.seed);
        Ok(body)
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EvidenceBody {
    State {
        node: String,
        state: String,
    },
    Value {
        node: String,
        value: f64,
        bandwidth: Option<f64>,
    },
}

fn evidence_body(s: &Session) -> Value {
    json!({ "evidence": s.evidence })
}

async fn add_evidence(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<EvidenceBody>, JsonRejection>,
) -> ApiResult<Value> {
    state.get(&id)?;
    let body = json_body(body)?;
    with_session(&state, &id, move |s| {
        let next = match body {
            EvidenceBody::State { node, state } => s.evidence.clone().with_state(node, state),
            EvidenceBody::Value {
                node,
                value,
                bandwidth,
            } => {
                let h = bandwidth.unwrap_or(DEFAULT_BANDWIDTH);
                if !(h > 0.0 && h.is_finite()) || !value.is_finite() {
                    return Err(ApiError::bad_request(
                        "value and bandwidth must be finite, bandwidth > 0",
                    ));
                }
                s.evidence.clone().with_value(node, value, h)
            }
        };
        next.check(&s.active)?;
        let discrete = Evidence {
            discrete: next.discrete.clone(),
            continuous: None,
        };
        discrete_posterior_exact(&s.active, &discrete)?;
        s.evidence = next;
        s.last_posterior = None;
        s.last_forecast = None;
        Ok(evidence_body(s))
    })
    .await
}

async fn get_evidence(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Value> {
    with_session(&state, &id, |s| Ok(evidence_body(s))).await
}

#[derive(Deserialize)]
struct ClearQuery {
    node: Option<String>,
}

/// Clears all evidence, or only the observation on `?node=`.
async fn clear_evidence(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<ClearQuery>, QueryRejection>,
) -> ApiResult<Value> {
    let query = query_params(query)?;
    with_session(&state, &id, move |s| {
        match query.node {
            None => s.evidence = Evidence::none(),
            Some(node) => {
                s.evidence.discrete.remove(&node);
                if s.evidence
                    .continuous
                    .as_ref()
                    .is_some_and(|c| c.node == node)
                {
                    s.evidence.continuous = None;
                }
            }
        }
        s.last_posterior = None;
        s.last_forecast = None;
        Ok(evidence_body(s))
    })
    .await
}

#[derive(Deserialize)]
struct PosteriorQuery {
    method: Option<String>,
}

/// `convolution` (default), `kde` or `exact`.
pub fn density_method(name: Option<&str>, seed: u64) -> Result<Option<DensityMethod>, String> {
    match name.unwrap_or("convolution") {
        "convolution" | "convolution-density" => Ok(Some(DensityMethod::convolution())),
        "kde" | "monte-carlo-kde" => Ok(Some(DensityMethod::kde(seed))),
        "exact" | "exact-enumeration" => Ok(None),
        other => Err(format!(
            "unknown method `{other}`; expected convolution, kde or exact"
        )),
    }
}

async fn get_posteriors(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<PosteriorQuery>, QueryRejection>,
) -> ApiResult<Value> {
    let query = query_params(query)?;
    with_session(&state, &id, move |s| {
        let method =
            density_method(query.method.as_deref(), s.seed).map_err(ApiError::bad_request)?;
        let report = match method {
            Some(m) => posterior(&s.active, &s.evidence, m)?,
            None => discrete_posterior_exact(&s.active, &s.evidence)?,
        };
        let body = json!({
            "method": report.method,
            "nodes": report.nodes,
            "evidence": s.evidence,
        });
        s.last_posterior = Some(report);
        Ok(body)
    })
    .await
}

#[derive(Deserialize)]
struct ForecastQuery {
    n: Option<usize>,
    seed: Option<u64>,
}

/// Forward-sampled forecast of the equation node under the discrete evidence.
pub fn forecast(
    net: &Network,
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<ForecastSummary, InferenceError> {
    let discrete = Evidence {
        discrete: evidence.discrete.clone(),
        continuous: None,
    };
    let run = forward_sample(net, n, seed, &discrete)?;
    let ci = equation_mean_ci(&run)?;
    let analytic = discrete
        .is_empty()
        .then(|| analytic_mean(net).ok())
        .flatten();
    Ok(ForecastSummary {
        node: run.target.clone(),
        n,
        seed,
        mean: ci.mean,
        sd: ci.sd,
        ci,
        analytic_mean: analytic,
        histogram: Histogram::of(&run.values, HISTOGRAM_BINS),
    })
}

async fn get_forecast(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<ForecastQuery>, QueryRejection>,
) -> ApiResult<ForecastSummary> {
    let query = query_params(query)?;
    with_session(&state, &id, move |s| {
        let n = query.n.unwrap_or(DEFAULT_ITERATIONS);
        if !(2..=MAX_FORECAST_ITERATIONS).contains(&n) {
            return Err(ApiError::bad_request(format!(
                "n must be in 2..={MAX_FORECAST_ITERATIONS}"
            )));
        }
        let summary = forecast(&s.active, &s.evidence, n, query.seed.unwrap_or(s.seed))?;
        s.last_forecast = Some(summary.clone());
        Ok(summary)
    })
    .await
}

/// Per-term weights in term order, matching each key to the term whose
/// selector names it.
pub fn term_weights(net: &Network, w: &Weights) -> Result<Vec<f64>, String> {
    for (key, v) in [
        ("price", w.price),
        ("promotions", w.promotions),
        ("location", w.location),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("weight `{key}` must be a non-negative number"));
        }
    }
    let sum = w.price + w.promotions + w.location;
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(format!("weights must sum to 1, got {sum}"));
    }
    let target = target_equation(net).map_err(|e| e.to_string())?;
    let NodeKind::Equation { expr } = &target.kind else {
        return Err("target is not an equation node".into());
    };
    let keys = [
        ("price", w.price),
        ("promotion", w.promotions),
        ("location", w.location),
    ];
    expr.terms
        .iter()
        .map(|t| {
            let sel = t.selector.to_lowercase();
            let hits: Vec<f64> = keys
                .iter()
                .filter(|(k, _)| sel.contains(k))
                .map(|(_, v)| *v)
                .collect();
            match hits.as_slice() {
                [v] => Ok(*v),
                _ => Err(format!(
                    "cannot match Choose selector `{}` to a weight",
                    t.selector
                )),
            }
        })
        .collect()
}

async fn set_weights(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Weights>, JsonRejection>,
) -> ApiResult<Value> {
    state.get(&id)?;
    let weights = json_body(body)?;
    with_session(&state, &id, move |s| {
        let per_term = term_weights(&s.base, &weights).map_err(ApiError::bad_request)?;
        let active = reweight(&s.base, &per_term)?;
        let mean = analytic_mean(&active)?;
        s.active = active;
        s.weights = Some(weights);
        s.last_posterior = None;
        s.last_forecast = None;
        Ok(json!({ "weights": weights, "analytic_mean": mean }))
    })
    .await
}
