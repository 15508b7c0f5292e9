//! HTTP inference service over immutable, shared models.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `GET /api/health` | | `{status, planner_loaded, generator_loaded}` |
//! | `POST /api/plan` | `{data}` | `{plan, ordering}` (∅ labels as `null`) |
//! | `POST /api/generate` | `{data, plan?, plans?, strategy?, num_outputs?, seed?, max_length?}` | `{outputs}` |
//!
//! Errors are `{error, detail}` with status 400 (malformed body or strategy),
//! 422 (invalid data or unresolvable plan) or 503 (model not loaded).

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use plangen_core::data::{ContentPlan, StructuredData};
use plangen_core::delex::{delexicalize, find_value_spans, ValueSpan};
use plangen_core::generator::{decode, DecodeConfig, DecodeStrategy, GeneratorModel};
use plangen_core::metrics::s_bleu;
use plangen_core::planner::PlannerModel;
use serde::{Deserialize, Serialize};

use crate::jsonl::WireData;

#[derive(Clone, Default)]
pub struct AppState {
    pub planner: Option<Arc<PlannerModel>>,
    pub generator: Option<Arc<GeneratorModel>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub detail: String,
}

pub struct Failure(pub StatusCode, pub ApiError);

impl Failure {
    fn new(status: StatusCode, error: &str, detail: impl ToString) -> Self {
        Self(status, ApiError { error: error.into(), detail: detail.to_string() })
    }

    fn invalid(detail: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", detail)
    }

    fn unavailable(what: &str) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", format!("no {what} checkpoint is loaded"))
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<JsonRejection> for Failure {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub planner_loaded: bool,
    pub generator_loaded: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRequest {
    pub data: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanResponse {
    pub plan: Vec<String>,
    pub ordering: Vec<Option<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub data: serde_json::Value,
    /// Plan for every output.
    #[serde(default)]
    pub plan: Option<Vec<String>>,
    /// One plan per output; overrides `plan` and `num_outputs`.
    #[serde(default)]
    pub plans: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub strategy: Option<serde_json::Value>,
    #[serde(default)]
    pub num_outputs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    /// Space-joined tokens; value spans index these tokens.
    pub text: String,
    pub tokens: Vec<String>,
    pub plan: Vec<String>,
    pub realized_plan: Vec<String>,
    pub s_bleu: f64,
    pub value_spans: Vec<ValueSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<Output>,
}

pub const MAX_OUTPUTS: usize = 32;

pub fn router(state: AppState) -> Router {
    Router::new().route("/api/health", get(health)).route("/api/plan", post(plan)).route("/api/generate", post(generate)).with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), planner_loaded: s.planner.is_some(), generator_loaded: s.generator.is_some() })
}

fn parse_data(v: serde_json::Value) -> Result<StructuredData, Failure> {
    let wire: WireData = serde_json::from_value(v).map_err(Failure::invalid)?;
    wire.to_data().map_err(Failure::invalid)
}

/// Parses `{"kind": "greedy" | "beam" | "topk" | "nucleus", ...}` or the bare
/// kind string; parameters default to width 10, k 50 and p 0.9.
pub fn parse_strategy(v: Option<serde_json::Value>) -> Result<DecodeStrategy, String> {
    let v = match v {
        None => return Ok(DecodeStrategy::Greedy),
        Some(serde_json::Value::String(s)) => serde_json::json!({ "kind": s }),
        Some(v) => v,
    };
    let kind = v.get("kind").and_then(|k| k.as_str()).ok_or("strategy needs a \"kind\"")?;
    let num = |field: &str| v.get(field).map(|x| x.as_f64().ok_or(format!("\"{field}\" must be a number")));
    let count = |field: &str, default: usize| -> Result<usize, String> {
        match num(field) {
            None => Ok(default),
            Some(Ok(x)) if x >= 0.0 && x.fract() == 0.0 => Ok(x as usize),
            Some(Ok(x)) => Err(format!("\"{field}\" must be a non-negative integer, got {x}")),
            Some(Err(e)) => Err(e),
        }
    };
    match kind {
        "greedy" => Ok(DecodeStrategy::Greedy),
        "beam" => Ok(DecodeStrategy::Beam { width: count("width", 10)? }),
        "topk" | "top_k" => Ok(DecodeStrategy::TopK { k: count("k", 50)? }),
        "nucleus" => Ok(DecodeStrategy::Nucleus { p: num("p").transpose()?.unwrap_or(0.9) }),
        other => Err(format!("unknown strategy {other:?}")),
    }
}

async fn plan(State(s): State<AppState>, body: Result<Json<PlanRequest>, JsonRejection>) -> Result<Json<PlanResponse>, Failure> {
    let Json(req) = body?;
    let planner = s.planner.clone().ok_or_else(|| Failure::unavailable("planner"))?;
    let data = parse_data(req.data)?;
    let (ordering, plan) = tokio::task::spawn_blocking(move || planner.predict(&data).map(|(o, p)| (o, p.tokens(&data))))
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map_err(Failure::invalid)?;
    let ordering = ordering.labels.iter().map(|&l| (l > 0).then_some(l)).collect();
    Ok(Json(PlanResponse { plan, ordering }))
}

/// Full generate pipeline, shared by the HTTP handler and offline callers.
pub fn run_generate(state: &AppState, req: GenerateRequest) -> Result<GenerateResponse, Failure> {
    let generator = state.generator.as_ref().ok_or_else(|| Failure::unavailable("generator"))?;
    let data = parse_data(req.data)?;
    let strategy = parse_strategy(req.strategy).map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "bad_strategy", e))?;
    let resolve = |tokens: &[String]| ContentPlan::resolve(tokens, &data).map_err(Failure::invalid);
    let (plans, per_output) = match (&req.plans, &req.plan) {
        (Some(list), _) => (list.iter().map(|p| resolve(p)).collect::<Result<Vec<_>, _>>()?, true),
        (None, Some(p)) => (vec![resolve(p)?], false),
        (None, None) => {
            let planner = state.planner.as_ref().ok_or_else(|| Failure::unavailable("planner"))?;
            (vec![planner.predict_plan(&data).map_err(Failure::invalid)?], false)
        }
    };
    let num_outputs = if per_output { plans.len() } else { req.num_outputs.unwrap_or(1) };
    if num_outputs == 0 || num_outputs > MAX_OUTPUTS {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "bad_strategy", format!("num_outputs must be in 1..={MAX_OUTPUTS}")));
    }
    let cfg = DecodeConfig {
        strategy,
        seed: req.seed.unwrap_or(0),
        max_length: req.max_length.unwrap_or(generator.config().max_target),
        num_outputs: if per_output { 1 } else { num_outputs },
    };
    cfg.validate(generator.vocab().len()).map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "bad_strategy", e))?;
    let mut outputs = Vec::with_capacity(num_outputs);
    for plan in &plans {
        let texts = decode(generator, &data, plan, &cfg).map_err(Failure::invalid)?;
        let plan_tokens = plan.tokens(&data);
        for tokens in texts {
            outputs.push(Output {
                text: tokens.join(" "),
                realized_plan: delexicalize(&data, &tokens),
                s_bleu: s_bleu(&data, &plan_tokens, &tokens),
                value_spans: find_value_spans(&data, &tokens),
                plan: plan_tokens.clone(),
                tokens,
            });
        }
    }
    Ok(GenerateResponse { outputs })
}

async fn generate(
    State(s): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, Failure> {
    let Json(req) = body?;
    tokio::task::spawn_blocking(move || run_generate(&s, req))
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map(Json)
}

pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
