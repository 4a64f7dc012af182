//! Selecting disagreement cases for human review and recording resolutions.
//!
//! Two seeded samplers pick cases from similarity bands: same-label pairs
//! with mid-range similarity (stratified by the agreed positive codes) and
//! different-label pairs with very high similarity. Sampling is uniform
//! without replacement and deterministic for fixed inputs and seed,
//! independent of input order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::PairComparison;
use crate::codebook::{eq_fold, Codebook};
use crate::decision::{normalize_decision, DecisionError, DecisionMap};
use crate::model::AgreementQuadrant;
use crate::parser::ParsedTurn;

pub const DEFAULT_K_PER_CODE: usize = 15;
pub const DEFAULT_WITHIN_BAND: Band = Band { low: 0.55, high: 0.78 };
pub const DEFAULT_BETWEEN_N: usize = 45;
pub const DEFAULT_BETWEEN_BAND: Band = Band { low: 0.95, high: 0.99 };

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriageError {
    #[error("band [{low}, {high}] must satisfy 0 <= low < high <= 1")]
    InvalidBand { low: String, high: String },
    #[error("case `{0}` not found")]
    CaseNotFound(String),
    #[error("case `{case_id}` already resolved by {by}")]
    AlreadyResolved { case_id: String, by: String },
    #[error("invalid decision: {0}")]
    InvalidDecision(#[from] DecisionError),
}

/// Inclusive similarity band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Result<Band, TriageError> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return Err(TriageError::InvalidBand {
                low: format!("{low}"),
                high: format!("{high}"),
            });
        }
        Ok(Band { low, high })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseReason {
    WithinMisalignBand,
    BetweenAlignBand,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Open,
    Adjudicated,
    Skipped,
}

/// A compared pair with both turns, as fed to the samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair: PairComparison,
    pub turn_a: ParsedTurn,
    pub turn_b: ParsedTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageCase {
    pub case_id: String,
    pub pair: PairComparison,
    pub turn_a: ParsedTurn,
    pub turn_b: ParsedTurn,
    pub reason: CaseReason,
    /// Code stratum the case was drawn for, if any.
    pub stratum: Option<String>,
    pub priority: f64,
    pub status: CaseStatus,
}

impl TriageCase {
    pub fn new(c: &Candidate, reason: CaseReason, stratum: Option<String>) -> TriageCase {
        let prefix = match reason {
            CaseReason::WithinMisalignBand => "wm",
            CaseReason::BetweenAlignBand => "ba",
            CaseReason::Manual => "mn",
        };
        let p = &c.pair;
        let mut case = TriageCase {
            case_id: format!("{prefix}:{}:{}:{}", p.run_id, p.segment_id, p.round),
            pair: p.clone(),
            turn_a: c.turn_a.clone(),
            turn_b: c.turn_b.clone(),
            reason,
            stratum,
            priority: 0.0,
            status: CaseStatus::Open,
        };
        case.priority = prioritize(&case);
        case
    }
}

/// Review order, higher first: between-align cases, then within-misalign
/// cases by distance below the threshold, then manual cases.
pub fn prioritize(case: &TriageCase) -> f64 {
    match case.reason {
        CaseReason::BetweenAlignBand => 2.0,
        CaseReason::WithinMisalignBand => 1.0 + (case.pair.tau - case.pair.cs),
        CaseReason::Manual => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub stratum: Option<String>,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub cases: Vec<TriageCase>,
    pub shortfalls: Vec<Shortfall>,
    pub seed: u64,
}

fn canonical(candidates: &[Candidate]) -> Vec<&Candidate> {
    let mut out: Vec<&Candidate> = candidates.iter().collect();
    out.sort_by(|a, b| a.pair.order_key().cmp(&b.pair.order_key()));
    out
}

fn draw<'a>(
    pool: &[&'a Candidate],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a Candidate> {
    let m = k.min(pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

/// Same-label, low-similarity pairs, up to `k_per_code` per positive code.
///
/// A pair is drawn at most once overall; codes are visited in codebook order.
pub fn sample_within_misalign(
    candidates: &[Candidate],
    cb: &Codebook,
    k_per_code: usize,
    band: Band,
    seed: u64,
    exclude_codes: &[String],
) -> Sample {
    let pool = canonical(candidates);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: Vec<&Candidate> = Vec::new();
    let mut cases = Vec::new();
    let mut shortfalls = Vec::new();
    for code in cb.codes() {
        if exclude_codes.iter().any(|e| eq_fold(e.trim(), &code.name)) {
            continue;
        }
        let eligible: Vec<&Candidate> = pool
            .iter()
            .copied()
            .filter(|c| {
                c.pair.quadrant == AgreementQuadrant::WithinMisalign
                    && band.contains(c.pair.cs)
                    && c.turn_a.decision.get(&code.name) == Some(true)
                    && !taken.iter().any(|t| core::ptr::eq(*t, *c))
            })
            .collect();
        if eligible.len() < k_per_code {
            shortfalls.push(Shortfall {
                stratum: Some(code.name.clone()),
                requested: k_per_code,
                available: eligible.len(),
            });
        }
        for c in draw(&eligible, k_per_code, &mut rng) {
            taken.push(c);
            cases.push(TriageCase::new(c, CaseReason::WithinMisalignBand, Some(code.name.clone())));
        }
    }
    Sample { cases, shortfalls, seed }
}

/// Different-label, high-similarity pairs, up to `n`.
pub fn sample_between_align(candidates: &[Candidate], n: usize, band: Band, seed: u64) -> Sample {
    let pool = canonical(candidates);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible: Vec<&Candidate> = pool
        .into_iter()
        .filter(|c| c.pair.quadrant == AgreementQuadrant::BetweenAlign && band.contains(c.pair.cs))
        .collect();
    let shortfalls = if eligible.len() < n {
        alloc::vec![Shortfall {
            stratum: None,
            requested: n,
            available: eligible.len(),
        }]
    } else {
        Vec::new()
    };
    let cases = draw(&eligible, n, &mut rng)
        .into_iter()
        .map(|c| TriageCase::new(c, CaseReason::BetweenAlignBand, None))
        .collect();
    Sample { cases, shortfalls, seed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub case_id: String,
    pub reviewer: String,
    pub resolved_decision: DecisionMap,
    pub codebook_note: String,
    pub created_at: String,
}

/// Resolves an open case. `resolved` is checked against the codebook.
pub fn adjudicate<I, K>(
    case: &mut TriageCase,
    existing: Option<&Adjudication>,
    reviewer: &str,
    resolved: I,
    note: &str,
    cb: &Codebook,
    created_at: &str,
) -> Result<Adjudication, TriageError>
where
    I: IntoIterator<Item = (K, bool)>,
    K: AsRef<str>,
{
    if let Some(prev) = existing {
        return Err(TriageError::AlreadyResolved {
            case_id: case.case_id.clone(),
            by: prev.reviewer.clone(),
        });
    }
    if case.status != CaseStatus::Open {
        return Err(TriageError::AlreadyResolved {
            case_id: case.case_id.clone(),
            by: String::from("(skipped)"),
        });
    }
    let resolved_decision = normalize_decision(resolved, cb)?;
    case.status = CaseStatus::Adjudicated;
    Ok(Adjudication {
        case_id: case.case_id.clone(),
        reviewer: reviewer.into(),
        resolved_decision,
        codebook_note: note.into(),
        created_at: created_at.into(),
    })
}

pub fn skip(case: &mut TriageCase) -> Result<(), TriageError> {
    if case.status != CaseStatus::Open {
        return Err(TriageError::AlreadyResolved {
            case_id: case.case_id.clone(),
            by: String::from("(closed)"),
        });
    }
    case.status = CaseStatus::Skipped;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationSummary {
    pub open: usize,
    pub adjudicated: usize,
    pub skipped: usize,
    /// Share of adjudications matching at least one agent's decision.
    pub human_agent_agreement: Option<f64>,
    pub agrees_with_a: Option<f64>,
    pub agrees_with_b: Option<f64>,
}

pub fn adjudication_summary(cases: &[TriageCase], adjudications: &[Adjudication]) -> AdjudicationSummary {
    let count = |s| cases.iter().filter(|c| c.status == s).count();
    let (mut either, mut with_a, mut with_b, mut n) = (0usize, 0usize, 0usize, 0usize);
    for adj in adjudications {
        let Some(case) = cases.iter().find(|c| c.case_id == adj.case_id) else {
            continue;
        };
        n += 1;
        let a = case.turn_a.decision == adj.resolved_decision;
        let b = case.turn_b.decision == adj.resolved_decision;
        with_a += usize::from(a);
        with_b += usize::from(b);
        either += usize::from(a || b);
    }
    let rate = |k: usize| (n > 0).then(|| k as f64 / n as f64);
    AdjudicationSummary {
        open: count(CaseStatus::Open),
        adjudicated: count(CaseStatus::Adjudicated),
        skipped: count(CaseStatus::Skipped),
        human_agent_agreement: rate(either),
        agrees_with_a: rate(with_a),
        agrees_with_b: rate(with_b),
    }
}
