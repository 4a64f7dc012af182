//! The run, replay, analyze, sample and export workflows over run directories.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rtrc_core::analytics::{
    compare_pair, distribution_by_code, select_threshold, summarize_quadrants, temperature_summary,
    validation_stats, AnalyticsError, CodeDistribution, PairComparison, PairContext, QuadrantSummary,
    SegmentTurn, TemperatureCell, ThresholdMode, ValidationStats,
};
use rtrc_core::embedding::{EmbedError, EmbeddingProvider};
use rtrc_core::prompt::PromptSet;
use rtrc_core::triage::{
    adjudication_summary, sample_between_align, sample_within_misalign, AdjudicationSummary, Band,
    Candidate, CaseReason, Sample,
};
use rtrc_core::{Codebook, ParseMode, ParsedTurn, Segment, TurnId};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::embed::{provider_from_config, BoxedProvider, CachedProvider};
use crate::gateway::{ChatBackend, CompletionResponse, GatewayError, HttpBackend, ReplayBackend, ScriptedBackend};
use crate::orchestrator::{run_corpus, OrchestratorError, RunSettings, SegmentRun};
use crate::store::{
    CaseRecord, Counts, Manifest, RunStore, SegmentRecord, StoreError, TurnRecord, CASES_FILE, COMPARISONS_FILE,
    SEGMENTS_FILE, TURNS_FILE,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("embedding: {0}")]
    Embed(#[from] EmbedError),
    #[error("analytics: {0}")]
    Analytics(#[from] AnalyticsError),
    #[error("{0}")]
    Input(String),
}

/// What a run or replay produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub counts: Counts,
}

impl RunSummary {
    pub fn partial_failure(&self) -> bool {
        self.counts.failures > 0
    }
}

pub fn read_segments(path: &Path) -> Result<Vec<Segment>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn settings(cfg: &RunConfig) -> RunSettings {
    RunSettings {
        run_id: cfg.run_id.clone(),
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
        seed: cfg.seed,
        parallelism: cfg.backend.parallelism,
        parse_mode: if cfg.strict_parsing { ParseMode::Strict } else { ParseMode::Degraded },
    }
}

fn live_backend(cfg: &RunConfig) -> Result<Arc<dyn ChatBackend>, PipelineError> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Http => {
            let key = b.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
            Arc::new(HttpBackend::new(
                b.base_url.as_deref().unwrap_or_default(),
                b.model.as_deref().unwrap_or_default(),
                key,
                b.retry_policy(),
            )?)
        }
        BackendKind::Scripted => Arc::new(ScriptedBackend::from_jsonl(b.script.as_deref().unwrap_or(Path::new("")))?),
        BackendKind::Replay => {
            return Err(PipelineError::Input("replay backends are driven by the `replay` command".into()))
        }
    })
}

/// Runs the discussion protocol over the configured corpus and writes a
/// complete run directory.
pub async fn execute_run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let cb = Arc::new(cfg.load_codebook()?);
    let prompts = Arc::new(cfg.load_prompts()?);
    let segments = read_segments(&cfg.input)?;
    let backend = live_backend(cfg)?;
    let runs = run_corpus(&segments, cb.clone(), prompts.clone(), backend, settings(cfg)).await?;
    let store = RunStore::create(&cfg.run_dir())?;
    let manifest = Manifest {
        schema: Manifest::SCHEMA.into(),
        run_id: cfg.run_id.clone(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config: json!({ "run": cfg, "codebook": &*cb, "prompts": &*prompts }),
        counts: Counts::default(),
        version: VERSION.into(),
    };
    persist(&store, manifest, &runs, &cb, cfg)
}

/// Re-derives a run from its recorded raw turns.
///
/// The protocol is re-driven against the recorded replies, so segment
/// records, turns, comparisons and embeddings are rebuilt from scratch; the
/// manifest keeps its creation time and config snapshot.
pub async fn replay(run_dir: &Path) -> Result<RunSummary, PipelineError> {
    let store = RunStore::open(run_dir)?;
    let manifest = store.read_manifest()?;
    let (cfg, cb, prompts) = snapshot(&manifest)?;
    let segments: Vec<Segment> = store.segments()?.into_iter().map(|r| r.segment).collect();
    let recorded = store.turns()?.into_iter().map(|t| {
        (
            t.request_key,
            CompletionResponse {
                raw_text: t.raw_text,
                latency_ms: t.latency_ms,
                backend_id: t.backend_id,
                truncated: t.truncated,
            },
        )
    });
    let backend: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::new(recorded));
    let cb = Arc::new(cb);
    let runs = run_corpus(&segments, cb.clone(), Arc::new(prompts), backend, settings(&cfg)).await?;
    persist(&store, manifest, &runs, &cb, &cfg)
}

fn snapshot(m: &Manifest) -> Result<(RunConfig, Codebook, PromptSet), PipelineError> {
    let field = |name: &str| {
        m.config
            .get(name)
            .cloned()
            .ok_or_else(|| PipelineError::Input(format!("manifest config lacks `{name}`")))
    };
    let bad = |e: serde_json::Error| PipelineError::Input(format!("manifest config: {e}"));
    Ok((
        serde_json::from_value(field("run")?).map_err(bad)?,
        serde_json::from_value(field("codebook")?).map_err(bad)?,
        serde_json::from_value(field("prompts")?).map_err(bad)?,
    ))
}

fn persist(
    store: &RunStore,
    mut manifest: Manifest,
    runs: &[SegmentRun],
    cb: &Codebook,
    cfg: &RunConfig,
) -> Result<RunSummary, PipelineError> {
    let provider = provider_from_config(&cfg.embedding)?;
    let mut segments = Vec::with_capacity(runs.len());
    let mut turns: Vec<TurnRecord> = Vec::new();
    let mut failures = 0;
    for run in runs {
        failures += usize::from(run.result.is_err());
        let (outcome, final_decision, failure) = match &run.result {
            Ok(d) => (Some(d.outcome), Some(d.final_decision.clone()), None),
            Err(f) => (None, None, Some(f.clone())),
        };
        segments.push(SegmentRecord {
            segment: run.segment.clone(),
            outcome,
            final_decision,
            turn_ids: run.turns.iter().map(|t| t.turn_id).collect(),
            failure,
        });
        turns.extend(run.turns.iter().cloned());
    }
    let comparisons = derive_comparisons(runs, cb, &provider, cfg)?;
    let embeddings = embed_turns(&turns, &provider)?;

    store.write_records(SEGMENTS_FILE, &segments)?;
    store.write_records(TURNS_FILE, &turns)?;
    store.write_records(COMPARISONS_FILE, &comparisons)?;
    store.write_embeddings(provider.dim(), &embeddings)?;
    manifest.counts = Counts {
        segments: segments.len(),
        turns: turns.len(),
        pairs: comparisons.len(),
        failures,
    };
    store.write_manifest(&manifest)?;
    Ok(RunSummary {
        run_dir: store.dir().to_path_buf(),
        counts: manifest.counts,
    })
}

/// One comparison per coder round of every completed discussion.
pub fn derive_comparisons<P: EmbeddingProvider + ?Sized>(
    runs: &[SegmentRun],
    cb: &Codebook,
    provider: &P,
    cfg: &RunConfig,
) -> Result<Vec<PairComparison>, PipelineError> {
    let ctx = PairContext {
        run_id: &cfg.run_id,
        temperature: cfg.temperature,
    };
    let mut out = Vec::new();
    for run in runs {
        let Ok(d) = &run.result else { continue };
        for (a, b) in d.coder_pairs() {
            let side = |turn| SegmentTurn {
                segment_id: &d.segment_id,
                turn,
            };
            match compare_pair(side(a), side(b), ctx, provider, cb, cfg.analysis.tau) {
                Ok(p) => out.push(p),
                Err(AnalyticsError::Embed(EmbedError::EmptyText)) => {
                    tracing::warn!(segment = %d.segment_id, round = %a.round, "pair has no text to embed; skipped")
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(out)
}

fn embedded_text(t: &ParsedTurn) -> &str {
    if t.reasoning.is_empty() {
        &t.explanation
    } else {
        &t.reasoning
    }
}

fn embed_turns(turns: &[TurnRecord], provider: &CachedProvider<BoxedProvider>) -> Result<Vec<(TurnId, Vec<f32>)>, PipelineError> {
    let mut out = Vec::new();
    for t in turns {
        let Some(p) = &t.parsed else { continue };
        match provider.embed(embedded_text(p)) {
            Ok(e) => out.push((t.turn_id, e.vector.values().iter().map(|&x| x as f32).collect())),
            Err(EmbedError::EmptyText) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub runs: Vec<String>,
    pub threshold_mode: ThresholdMode,
    pub tau: f64,
    pub n_pairs: usize,
    pub n_degraded: usize,
    pub degraded_excluded: bool,
    pub quadrants: QuadrantSummary,
    /// Absent when one agreement group has fewer than two pairs.
    pub validation: Option<ValidationStats>,
    pub validation_error: Option<String>,
    pub code_distributions: Vec<CodeDistribution>,
    pub temperature: Vec<TemperatureCell>,
    pub adjudication: AdjudicationSummary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalyzeOptions {
    /// `None` uses each run's configured tau.
    pub threshold: Option<ThresholdMode>,
    pub exclude_degraded: bool,
    pub resamples: Option<usize>,
    pub seed: Option<u64>,
}

/// Pools comparisons from one or more runs and computes the full report.
pub fn build_report(stores: &[RunStore], opts: AnalyzeOptions) -> Result<(Report, Vec<PairComparison>, Codebook), PipelineError> {
    let first = stores.first().ok_or_else(|| PipelineError::Input("no runs given".into()))?;
    let (cfg, cb, _) = snapshot(&first.read_manifest()?)?;
    let mut runs = Vec::new();
    let mut pairs = Vec::new();
    let (mut cases, mut adjudications) = (Vec::new(), Vec::new());
    for s in stores {
        runs.push(s.read_manifest()?.run_id);
        pairs.extend(s.comparisons()?);
        cases.extend(s.cases()?);
        adjudications.extend(s.adjudications()?);
    }
    let n_degraded = pairs.iter().filter(|p| p.degraded).count();
    if opts.exclude_degraded {
        pairs.retain(|p| !p.degraded);
    }
    let mode = opts.threshold.unwrap_or(ThresholdMode::Fixed(cfg.analysis.tau));
    let cs: Vec<f64> = pairs.iter().map(|p| p.cs).collect();
    let tau = select_threshold(&cs, mode)?;
    let pairs: Vec<PairComparison> = pairs.into_iter().map(|p| p.with_tau(tau)).collect();
    let (validation, validation_error) = match validation_stats(
        &pairs,
        opts.resamples.unwrap_or(cfg.analysis.bootstrap_resamples),
        opts.seed.unwrap_or(cfg.analysis.bootstrap_seed),
    ) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = Report {
        schema: "report/v1".into(),
        runs,
        threshold_mode: mode,
        tau,
        n_pairs: pairs.len(),
        n_degraded,
        degraded_excluded: opts.exclude_degraded,
        quadrants: summarize_quadrants(&pairs)?,
        validation,
        validation_error,
        code_distributions: distribution_by_code(&pairs, &cb),
        temperature: temperature_summary(&pairs),
        adjudication: adjudication_summary(&cases, &adjudications),
    };
    Ok((report, pairs, cb))
}

/// Writes `report.json` and `comparisons.csv` into `out`.
pub fn analyze(run_dirs: &[PathBuf], opts: AnalyzeOptions, out: &Path) -> Result<Report, PipelineError> {
    let stores = run_dirs.iter().map(|d| RunStore::open(d)).collect::<Result<Vec<_>, _>>()?;
    let (report, pairs, cb) = build_report(&stores, opts)?;
    fs::create_dir_all(out).map_err(|e| PipelineError::Input(format!("{}: {e}", out.display())))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&out.join("report.json"), json.as_bytes())?;
    write_file(&out.join("comparisons.csv"), &comparisons_csv(&pairs, &cb)?)?;
    Ok(report)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

pub fn comparisons_csv(pairs: &[PairComparison], cb: &Codebook) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "segment_id", "run_id", "round", "temperature", "agent_a", "agent_b", "cs", "label_agreement", "quadrant",
        "degraded", "truncated",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(cb.names().map(|n| format!("cs:{n}")));
    let csv_err = |e: csv::Error| PipelineError::Input(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for p in rtrc_core::analytics::canonical_order(pairs) {
        let mut row = vec![
            p.segment_id.clone(),
            p.run_id.clone(),
            p.round.to_string(),
            p.temperature.to_string(),
            p.agent_pair.0.to_string(),
            p.agent_pair.1.to_string(),
            p.cs.to_string(),
            p.label_agreement.to_string(),
            p.quadrant.as_str().to_string(),
            p.degraded.to_string(),
            p.truncated.to_string(),
        ];
        for name in cb.names() {
            let v = p.per_code_cs.as_ref().and_then(|s| s.get(name));
            row.push(v.map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    WithinMisalign,
    BetweenAlign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleParams {
    pub mode: SampleMode,
    /// Per code for within-misalign, total for between-align.
    pub count: usize,
    pub band: Band,
    pub seed: u64,
    pub exclude: Vec<String>,
    pub tau: Option<f64>,
}

/// Joins stored comparisons with their parsed turns.
pub fn candidates(store: &RunStore, tau: Option<f64>) -> Result<Vec<Candidate>, PipelineError> {
    let turns: HashMap<TurnId, ParsedTurn> = store
        .turns()?
        .into_iter()
        .filter_map(|t| t.parsed.map(|p| (t.turn_id, p)))
        .collect();
    Ok(store
        .comparisons()?
        .into_iter()
        .filter_map(|p| {
            let pair = match tau {
                Some(t) => p.with_tau(t),
                None => p,
            };
            Some(Candidate {
                turn_a: turns.get(&pair.turn_ids.0)?.clone(),
                turn_b: turns.get(&pair.turn_ids.1)?.clone(),
                pair,
            })
        })
        .collect())
}

/// Draws a triage sample and merges it into the run's case file. Cases
/// already present (same id) are kept as they are.
pub fn sample(run_dir: &Path, params: &SampleParams) -> Result<Sample, PipelineError> {
    let store = RunStore::open(run_dir)?;
    let (_, cb, _) = snapshot(&store.read_manifest()?)?;
    let cands = candidates(&store, params.tau)?;
    let drawn = match params.mode {
        SampleMode::WithinMisalign => {
            sample_within_misalign(&cands, &cb, params.count, params.band, params.seed, &params.exclude)
        }
        SampleMode::BetweenAlign => sample_between_align(&cands, params.count, params.band, params.seed),
    };
    let mut records: Vec<CaseRecord> = store.read_records(CASES_FILE)?;
    for case in &drawn.cases {
        if !records.iter().any(|r| r.case.case_id == case.case_id) {
            records.push(CaseRecord {
                case: case.clone(),
                seed: params.seed,
            });
        }
    }
    store.write_records(CASES_FILE, &records)?;
    Ok(drawn)
}

/// Adds one case by hand for a stored comparison.
pub fn add_manual_case(run_dir: &Path, segment_id: &str, round: rtrc_core::Round) -> Result<String, PipelineError> {
    let store = RunStore::open(run_dir)?;
    let cand = candidates(&store, None)?
        .into_iter()
        .find(|c| c.pair.segment_id == segment_id && c.pair.round == round)
        .ok_or_else(|| PipelineError::Input(format!("no comparison for {segment_id} {round}")))?;
    let case = rtrc_core::triage::TriageCase::new(&cand, CaseReason::Manual, None);
    let id = case.case_id.clone();
    let mut records: Vec<CaseRecord> = store.read_records(CASES_FILE)?;
    if !records.iter().any(|r| r.case.case_id == id) {
        records.push(CaseRecord { case, seed: 0 });
        store.write_records(CASES_FILE, &records)?;
    }
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Comparisons,
    Cases,
    Segments,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn export(run_dir: &Path, kind: ExportKind, format: ExportFormat) -> Result<Vec<u8>, PipelineError> {
    let store = RunStore::open(run_dir)?;
    let json_bytes = |v: serde_json::Value| {
        let mut s = serde_json::to_string_pretty(&v).expect("json value serializes");
        s.push('\n');
        s.into_bytes()
    };
    match (kind, format) {
        (ExportKind::Comparisons, ExportFormat::Csv) => {
            let (_, cb, _) = snapshot(&store.read_manifest()?)?;
            comparisons_csv(&store.comparisons()?, &cb)
        }
        (ExportKind::Comparisons, ExportFormat::Json) => Ok(json_bytes(json!(store.comparisons()?))),
        (ExportKind::Cases, ExportFormat::Json) => Ok(json_bytes(json!(store.cases()?))),
        (ExportKind::Segments, ExportFormat::Json) => Ok(json_bytes(json!(store.segments()?))),
        (ExportKind::Report, ExportFormat::Json) => {
            let (report, _, _) = build_report(std::slice::from_ref(&store), AnalyzeOptions::default())?;
            Ok(json_bytes(json!(report)))
        }
        (ExportKind::Cases, ExportFormat::Csv) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| PipelineError::Input(e.to_string());
            w.write_record(["case_id", "reason", "stratum", "priority", "status", "segment_id", "round", "cs"])
                .map_err(err)?;
            for c in store.cases()? {
                w.write_record([
                    c.case_id,
                    json!(c.reason).as_str().unwrap_or_default().to_string(),
                    c.stratum.unwrap_or_default(),
                    c.priority.to_string(),
                    json!(c.status).as_str().unwrap_or_default().to_string(),
                    c.pair.segment_id,
                    c.pair.round.to_string(),
                    c.pair.cs.to_string(),
                ])
                .map_err(err)?;
            }
            w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))
        }
        (k, ExportFormat::Csv) => Err(PipelineError::Input(format!("{k:?} has no CSV export"))),
    }
}
