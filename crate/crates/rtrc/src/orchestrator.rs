//! Drives discussions over a corpus against a chat backend.

use std::collections::HashSet;
use std::sync::Arc;

use rtrc_core::prompt::{PromptError, PromptSet};
use rtrc_core::protocol::{Discussion, SegmentDiscussion, Step};
use rtrc_core::{Codebook, ParseMode, Segment};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::gateway::{ChatBackend, CompletionRequest, GatewayError};
use crate::store::{SegmentFailure, TurnRecord};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no segments to process")]
    EmptyCorpus,
    #[error("duplicate segment id `{0}`")]
    DuplicateSegmentId(String),
    #[error("invalid prompts: {0}")]
    Prompt(#[from] PromptError),
    #[error("worker task failed: {0}")]
    Join(String),
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub run_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    pub parallelism: usize,
    pub parse_mode: ParseMode,
}

/// Everything one segment produced, successful or not.
#[derive(Debug, Clone)]
pub struct SegmentRun {
    pub segment: Segment,
    pub turns: Vec<TurnRecord>,
    pub result: Result<SegmentDiscussion, SegmentFailure>,
}

/// Runs one segment's discussion to completion or first failure.
///
/// `ordinal` numbers the segment within the run and fixes its turn ids.
pub async fn run_segment(
    seg: &Segment,
    ordinal: u64,
    cb: &Codebook,
    prompts: &PromptSet,
    backend: &dyn ChatBackend,
    settings: &RunSettings,
) -> SegmentRun {
    let mut discussion = Discussion::new(seg.id.clone(), settings.run_id.clone(), ordinal).with_parse_mode(settings.parse_mode);
    let mut turns = Vec::new();
    let result = loop {
        let req = match discussion.next_step() {
            Step::Finished(done) => break Ok(done),
            Step::Request(r) => r,
        };
        let key = req.request_key(&seg.id);
        let fail = |kind: &str, cause: String| SegmentFailure {
            request_key: key.clone(),
            kind: kind.to_string(),
            cause,
        };
        let messages = match prompts.render(req.agent, req.round, cb, seg, req.peer_output.as_deref()) {
            Ok(m) => m,
            Err(e) => break Err(fail("Prompt", e.to_string())),
        };
        let completion = CompletionRequest {
            agent: req.agent,
            request_key: key.clone(),
            messages,
            temperature: settings.temperature,
            max_output_tokens: settings.max_output_tokens,
            run_seed: settings.seed,
        };
        let resp = match backend.complete(&completion).await {
            Ok(r) => r,
            Err(e) => break Err(fail(gateway_kind(&e), e.to_string())),
        };
        let mut record = TurnRecord {
            run_id: settings.run_id.clone(),
            segment_id: seg.id.clone(),
            request_key: key.clone(),
            turn_id: req.turn_id,
            agent: req.agent,
            round: req.round,
            raw_text: resp.raw_text.clone(),
            backend_id: resp.backend_id,
            latency_ms: resp.latency_ms,
            truncated: resp.truncated,
            parsed: None,
            error: None,
        };
        match discussion.record(resp.raw_text, cb) {
            Ok(parsed) => {
                record.parsed = Some(parsed.clone());
                turns.push(record);
            }
            Err(e) => {
                record.error = Some(e.to_string());
                turns.push(record);
                break Err(fail("TurnParseFailure", format!("{}: {e}", e.kind())));
            }
        }
    };
    if let Err(f) = &result {
        tracing::warn!(segment = %seg.id, key = %f.request_key, "segment failed: {}", f.cause);
    }
    SegmentRun {
        segment: seg.clone(),
        turns,
        result,
    }
}

fn gateway_kind(e: &GatewayError) -> &'static str {
    match e {
        GatewayError::BackendUnreachable { .. } => "BackendUnreachable",
        GatewayError::BackendRejected { .. } => "BackendRejected",
        GatewayError::ScriptExhausted(_) => "ScriptExhausted",
        GatewayError::InvalidRequest(_) => "InvalidRequest",
        GatewayError::MalformedResponse(_) => "MalformedResponse",
        GatewayError::Script(_) => "Script",
    }
}

/// Runs every segment with at most `settings.parallelism` in flight.
///
/// Segments are numbered in id order, and results come back in id order
/// regardless of completion order.
pub async fn run_corpus(
    segments: &[Segment],
    cb: Arc<Codebook>,
    prompts: Arc<PromptSet>,
    backend: Arc<dyn ChatBackend>,
    settings: RunSettings,
) -> Result<Vec<SegmentRun>, OrchestratorError> {
    if segments.is_empty() {
        return Err(OrchestratorError::EmptyCorpus);
    }
    prompts.validate()?;
    let mut seen = HashSet::new();
    for s in segments {
        if !seen.insert(s.id.as_str()) {
            return Err(OrchestratorError::DuplicateSegmentId(s.id.clone()));
        }
    }
    let mut ordered: Vec<Segment> = segments.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let permits = Arc::new(Semaphore::new(settings.parallelism.max(1)));
    let settings = Arc::new(settings);
    let total = ordered.len();
    let mut tasks = JoinSet::new();
    for (ordinal, seg) in ordered.into_iter().enumerate() {
        let (cb, prompts, backend, settings, permits) =
            (cb.clone(), prompts.clone(), backend.clone(), settings.clone(), permits.clone());
        tasks.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            run_segment(&seg, ordinal as u64, &cb, &prompts, backend.as_ref(), &settings).await
        });
    }
    let mut out = Vec::with_capacity(total);
    let mut failures = 0;
    while let Some(joined) = tasks.join_next().await {
        let run = joined.map_err(|e| OrchestratorError::Join(e.to_string()))?;
        failures += usize::from(run.result.is_err());
        out.push(run);
        if out.len() % 100 == 0 || out.len() == total {
            tracing::info!(done = out.len(), total, failures, "segments processed");
        }
    }
    out.sort_by(|a, b| a.segment.id.cmp(&b.segment.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedBackend};
    use rtrc_core::protocol::Outcome;
    use rtrc_core::Speaker;

    fn seg(id: &str) -> Segment {
        Segment {
            id: id.into(),
            session_id: "S".into(),
            speaker: Speaker::Tutor,
            text: format!("text of {id}"),
            index_in_session: 0,
        }
    }

    fn entry(key: &str, code: &str) -> ScriptEntry {
        ScriptEntry {
            request_key: key.into(),
            raw_text: format!("<think>{key} reasoning</think> because {{'{code}': 1}}"),
        }
    }

    fn settings() -> RunSettings {
        RunSettings {
            run_id: "r".into(),
            temperature: 0.0,
            max_output_tokens: 256,
            seed: None,
            parallelism: 2,
            parse_mode: ParseMode::Degraded,
        }
    }

    #[tokio::test]
    async fn corpus_isolates_failures_and_orders_by_id() {
        let backend = ScriptedBackend::new([
            entry("b/round1/coder_a", "Greeting"),
            entry("b/round1/coder_b", "Greeting"),
            entry("a/round1/coder_a", "Greeting"),
            entry("a/round1/coder_b", "Instruction"),
            entry("a/round2/coder_a", "Instruction"),
            entry("a/round2/coder_b", "Instruction"),
            ScriptEntry {
                request_key: "c/round1/coder_a".into(),
                raw_text: "no decision".into(),
            },
        ]);
        let runs = run_corpus(
            &[seg("c"), seg("b"), seg("a")],
            Arc::new(Codebook::tutoring()),
            Arc::new(PromptSet::default()),
            Arc::new(backend),
            settings(),
        )
        .await
        .unwrap();
        let ids: Vec<&str> = runs.iter().map(|r| r.segment.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(runs[0].result.as_ref().unwrap().outcome, Outcome::Round2Consensus);
        assert_eq!(runs[1].result.as_ref().unwrap().outcome, Outcome::Round1Consensus);
        let f = runs[2].result.as_ref().unwrap_err();
        assert_eq!(f.kind, "TurnParseFailure");
        assert_eq!(runs[2].turns.len(), 1);
        assert_eq!(runs[2].turns[0].raw_text, "no decision");
        // turn ids follow id order: a=0, b=1, c=2
        assert_eq!(runs[1].turns[0].turn_id.0, 8);
    }

    #[tokio::test]
    async fn corpus_preconditions() {
        let b: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new([]));
        let cb = Arc::new(Codebook::tutoring());
        let ps = Arc::new(PromptSet::default());
        assert!(matches!(
            run_corpus(&[], cb.clone(), ps.clone(), b.clone(), settings()).await,
            Err(OrchestratorError::EmptyCorpus)
        ));
        assert!(matches!(
            run_corpus(&[seg("a"), seg("a")], cb, ps, b, settings()).await,
            Err(OrchestratorError::DuplicateSegmentId(_))
        ));
    }

    #[tokio::test]
    async fn gateway_errors_fail_the_segment_only() {
        let b = ScriptedBackend::new([entry("a/round1/coder_a", "Greeting")]);
        let run = run_segment(&seg("a"), 0, &Codebook::tutoring(), &PromptSet::default(), &b, &settings()).await;
        assert_eq!(run.result.unwrap_err().kind, "ScriptExhausted");
        assert_eq!(run.turns.len(), 1);
    }
}
