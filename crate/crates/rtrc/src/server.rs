//! JSON API over a run directory, plus static files for the review UI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rtrc_core::analytics::{CodeDistribution, CodeScores, QuadrantSummary, ValidationStats};
use rtrc_core::triage::{adjudicate, Adjudication, AdjudicationSummary, CaseStatus, TriageCase, TriageError};
use rtrc_core::{extract_reasoning_units, Codebook, ReasoningUnit};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::pipeline::{build_report, AnalyzeOptions, PipelineError};
use crate::store::{Manifest, RunStore, StoreError};

pub const DEFAULT_PORT: u16 = 8642;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RunStore>,
    codebook: Arc<Codebook>,
}

impl AppState {
    pub fn open(run_dir: &Path) -> Result<AppState, PipelineError> {
        let store = RunStore::open(run_dir)?;
        let manifest = store.read_manifest()?;
        let codebook = manifest
            .config
            .get("codebook")
            .cloned()
            .map(serde_json::from_value::<Codebook>)
            .transpose()
            .map_err(|e| PipelineError::Input(format!("manifest codebook: {e}")))?
            .unwrap_or_else(Codebook::tutoring);
        Ok(AppState {
            store: Arc::new(store),
            codebook: Arc::new(codebook),
        })
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "already_resolved", m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "store_error", m),
        };
        (status, Json(json!({"error": kind, "message": msg}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<TriageError> for ApiError {
    fn from(e: TriageError) -> Self {
        match e {
            TriageError::CaseNotFound(_) => ApiError::NotFound(e.to_string()),
            TriageError::AlreadyResolved { .. } => ApiError::Conflict(e.to_string()),
            TriageError::InvalidDecision(_) => ApiError::Unprocessable(e.to_string()),
            TriageError::InvalidBand { .. } => ApiError::BadRequest(e.to_string()),
        }
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/manifest", get(manifest))
        .route("/api/stats", get(stats))
        .route("/api/codes/{code}/distribution", get(distribution))
        .route("/api/queue", get(queue))
        .route("/api/cases/{id}", get(case_detail))
        .route("/api/cases/{id}/adjudication", post(submit_adjudication))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn manifest(State(s): State<AppState>) -> Result<Json<Manifest>, ApiError> {
    Ok(Json(s.store.read_manifest()?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsResponse {
    pub tau: f64,
    pub n_pairs: usize,
    pub validation: Option<ValidationStats>,
    pub quadrants: QuadrantSummary,
    pub adjudication: AdjudicationSummary,
}

async fn stats(State(s): State<AppState>) -> Result<Json<StatsResponse>, ApiError> {
    let store = s.store.clone();
    let report = tokio::task::spawn_blocking(move || {
        build_report(std::slice::from_ref(&*store), AnalyzeOptions::default()).map(|r| r.0)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(StatsResponse {
        tau: report.tau,
        n_pairs: report.n_pairs,
        validation: report.validation,
        quadrants: report.quadrants,
        adjudication: report.adjudication,
    }))
}

async fn distribution(State(s): State<AppState>, UrlPath(code): UrlPath<String>) -> Result<Json<CodeDistribution>, ApiError> {
    let idx = s
        .codebook
        .resolve(&code)
        .ok_or_else(|| ApiError::NotFound(format!("unknown code `{code}`")))?;
    let name = s.codebook.codes()[idx].name.clone();
    let pairs = s.store.comparisons()?;
    let d = rtrc_core::analytics::distribution_by_code(&pairs, &s.codebook)
        .into_iter()
        .find(|d| d.code == name)
        .expect("one distribution per code");
    Ok(Json(d))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueQuery {
    #[serde(default = "open_status")]
    pub status: CaseStatus,
    pub limit: Option<usize>,
}

fn open_status() -> CaseStatus {
    CaseStatus::Open
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueItem {
    pub case_id: String,
    pub reason: rtrc_core::triage::CaseReason,
    pub stratum: Option<String>,
    pub priority: f64,
    pub status: CaseStatus,
    pub segment_id: String,
    pub round: rtrc_core::Round,
    pub cs: f64,
    pub label_agreement: bool,
}

async fn queue(State(s): State<AppState>, q: Result<Query<QueueQuery>, axum::extract::rejection::QueryRejection>) -> Result<Json<Vec<QueueItem>>, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let mut cases: Vec<TriageCase> = s.store.cases()?.into_iter().filter(|c| c.status == q.status).collect();
    cases.sort_by(|a, b| b.priority.total_cmp(&a.priority).then_with(|| a.case_id.cmp(&b.case_id)));
    cases.truncate(q.limit.unwrap_or(usize::MAX));
    Ok(Json(
        cases
            .into_iter()
            .map(|c| QueueItem {
                case_id: c.case_id,
                reason: c.reason,
                stratum: c.stratum,
                priority: c.priority,
                status: c.status,
                segment_id: c.pair.segment_id,
                round: c.pair.round,
                cs: c.pair.cs,
                label_agreement: c.pair.label_agreement,
            })
            .collect(),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseDetail {
    pub case: TriageCase,
    pub units_a: Vec<ReasoningUnit>,
    pub units_b: Vec<ReasoningUnit>,
    pub per_code_cs: Option<CodeScores>,
    pub segment_text: Option<String>,
    pub adjudication: Option<Adjudication>,
}

fn find_case(s: &AppState, id: &str) -> Result<TriageCase, ApiError> {
    s.store
        .cases()?
        .into_iter()
        .find(|c| c.case_id == id)
        .ok_or_else(|| ApiError::NotFound(format!("case `{id}` not found")))
}

async fn case_detail(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<CaseDetail>, ApiError> {
    let case = find_case(&s, &id)?;
    let segment_text = s
        .store
        .segments()?
        .into_iter()
        .find(|r| r.segment.id == case.pair.segment_id)
        .map(|r| r.segment.text);
    let adjudication = s.store.adjudications()?.into_iter().find(|a| a.case_id == id);
    let per_code_cs: Option<CodeScores> = case.pair.per_code_cs.clone();
    Ok(Json(CaseDetail {
        units_a: extract_reasoning_units(&case.turn_a.reasoning, &s.codebook),
        units_b: extract_reasoning_units(&case.turn_b.reasoning, &s.codebook),
        per_code_cs,
        segment_text,
        adjudication,
        case,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjudicationBody {
    pub resolved_decision: std::collections::BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub note: String,
    pub reviewer: String,
}

fn as_binary(v: &serde_json::Value) -> Option<bool> {
    match v {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(0) => Some(false),
            Some(1) => Some(true),
            _ => None,
        },
        _ => None,
    }
}

async fn submit_adjudication(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AdjudicationBody>, JsonRejection>,
) -> Result<Json<TriageCase>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::Unprocessable(e.body_text()))?;
    if body.reviewer.trim().is_empty() {
        return Err(ApiError::Unprocessable("reviewer is required".into()));
    }
    let mut entries = Vec::with_capacity(body.resolved_decision.len());
    for (k, v) in &body.resolved_decision {
        let b = as_binary(v).ok_or_else(|| ApiError::Unprocessable(format!("value for `{k}` must be 0 or 1")))?;
        entries.push((k.clone(), b));
    }
    let mut case = find_case(&s, &id)?;
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let store = s.store.clone();
    let cb = s.codebook.clone();
    let case = tokio::task::spawn_blocking(move || -> Result<TriageCase, ApiError> {
        let existing = store.adjudications()?.into_iter().find(|a| a.case_id == case.case_id);
        let adj = adjudicate(&mut case, existing.as_ref(), &body.reviewer, entries, &body.note, &cb, &created_at)?;
        // a concurrent submission may have landed since the read above
        store.append_adjudication(&adj, |log| match log.iter().find(|a| a.case_id == adj.case_id) {
            Some(prev) => Err(ApiError::from(TriageError::AlreadyResolved {
                case_id: adj.case_id.clone(),
                by: prev.reviewer.clone(),
            })),
            None => Ok(()),
        })?;
        Ok(case)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(case))
}

pub async fn serve(run_dir: &Path, static_dir: Option<PathBuf>, port: u16) -> Result<(), PipelineError> {
    let state = AppState::open(run_dir)?;
    let app = router(state, static_dir);
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| PipelineError::Input(format!("bind {addr}: {e}")))?;
    tracing::info!("serving {} on http://{addr}", run_dir.display());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| PipelineError::Input(e.to_string()))
}
