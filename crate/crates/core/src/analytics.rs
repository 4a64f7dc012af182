//! Pairwise reasoning comparisons and the aggregate statistics built on them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::embedding::{cosine_with_overshoot, EmbedError, EmbeddingProvider, SimilarityError};
use crate::model::{AgentId, AgreementQuadrant, Round, TurnId};
use crate::parser::ParsedTurn;
use crate::stats::{self, BoxStats, GroupStats, RankCorrelation, StatsError, WelchTest};
use crate::units::{extract_reasoning_units, text_by_code};

pub const DEFAULT_TAU: f64 = 0.94;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
pub const DISTRIBUTION_BINS: usize = 50;
pub const OTSU_BINS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("turns belong to different segments or rounds")]
    SegmentMismatch,
    #[error("no comparisons")]
    EmptyInput,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
}

/// Per-code similarity scores in codebook order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CodeScores(pub Vec<(String, f64)>);

impl CodeScores {
    pub fn get(&self, code: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == code).map(|&(_, v)| v)
    }
}

impl Serialize for CodeScores {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for CodeScores {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoresVisitor;
        impl<'de> Visitor<'de> for ScoresVisitor {
            type Value = CodeScores;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of code names to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<CodeScores, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = access.next_entry::<String, f64>()? {
                    out.push(entry);
                }
                Ok(CodeScores(out))
            }
        }
        deserializer.deserialize_map(ScoresVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub segment_id: String,
    pub run_id: String,
    pub round: Round,
    pub temperature: f64,
    pub agent_pair: (AgentId, AgentId),
    pub turn_ids: (TurnId, TurnId),
    pub cs: f64,
    pub per_code_cs: Option<CodeScores>,
    pub label_agreement: bool,
    pub quadrant: AgreementQuadrant,
    pub tau: f64,
    /// cs was computed from explanations because a reasoning trace was missing.
    pub degraded: bool,
    /// At least one embedded text exceeded the provider's token limit.
    pub truncated: bool,
}

impl PairComparison {
    pub fn derived_quadrant(&self) -> AgreementQuadrant {
        AgreementQuadrant::classify(self.label_agreement, self.cs, self.tau)
    }

    /// Re-classifies against a different threshold.
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self.quadrant = self.derived_quadrant();
        self
    }

    pub(crate) fn order_key(&self) -> (&str, Round, &str, u64, (AgentId, AgentId)) {
        (
            &self.segment_id,
            self.round,
            &self.run_id,
            self.temperature.to_bits(),
            self.agent_pair,
        )
    }
}

/// Sorts comparisons into the fixed order used for every reduction.
pub fn canonical_order(pairs: &[PairComparison]) -> Vec<&PairComparison> {
    let mut v: Vec<&PairComparison> = pairs.iter().collect();
    v.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    v
}

/// Where a pair of turns came from.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub run_id: &'a str,
    pub temperature: f64,
}

/// One side of a comparison: the turn and the segment it codes.
#[derive(Debug, Clone, Copy)]
pub struct SegmentTurn<'a> {
    pub segment_id: &'a str,
    pub turn: &'a ParsedTurn,
}

pub fn compare_pair<P: EmbeddingProvider + ?Sized>(
    a: SegmentTurn<'_>,
    b: SegmentTurn<'_>,
    ctx: PairContext<'_>,
    provider: &P,
    cb: &Codebook,
    tau: f64,
) -> Result<PairComparison, AnalyticsError> {
    if a.segment_id != b.segment_id || a.turn.round != b.turn.round {
        return Err(AnalyticsError::SegmentMismatch);
    }
    let (ta, tb) = (a.turn, b.turn);
    let degraded = ta.is_degraded() || tb.is_degraded();
    let (text_a, text_b) = if degraded {
        (ta.explanation.as_str(), tb.explanation.as_str())
    } else {
        (ta.reasoning.as_str(), tb.reasoning.as_str())
    };
    let ea = provider.embed(text_a)?;
    let eb = provider.embed(text_b)?;
    let (cs, _) = cosine_with_overshoot(&ea.vector, &eb.vector)?;
    let mut truncated = ea.truncated || eb.truncated;

    let per_code_cs = if degraded {
        None
    } else {
        let ua = text_by_code(&extract_reasoning_units(&ta.reasoning, cb), cb);
        let ub = text_by_code(&extract_reasoning_units(&tb.reasoning, cb), cb);
        let mut scores = Vec::new();
        for (code, span_a) in &ua {
            let Some((_, span_b)) = ub.iter().find(|(c, _)| c == code) else {
                continue;
            };
            let x = provider.embed(span_a)?;
            let y = provider.embed(span_b)?;
            truncated |= x.truncated || y.truncated;
            scores.push((code.clone(), cosine_with_overshoot(&x.vector, &y.vector)?.0));
        }
        Some(CodeScores(scores))
    };

    let label_agreement = ta.decision == tb.decision;
    Ok(PairComparison {
        segment_id: a.segment_id.to_string(),
        run_id: ctx.run_id.to_string(),
        round: ta.round,
        temperature: ctx.temperature,
        agent_pair: (ta.agent, tb.agent),
        turn_ids: (ta.turn_id, tb.turn_id),
        cs,
        per_code_cs,
        label_agreement,
        quadrant: AgreementQuadrant::classify(label_agreement, cs, tau),
        tau,
        degraded,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantCell {
    pub quadrant: AgreementQuadrant,
    pub count: usize,
    pub proportion: f64,
    pub proportion_ci: (f64, f64),
    pub mean_cs: Option<f64>,
    pub mean_ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSummary {
    pub n: usize,
    /// Within-align, between-misalign, within-misalign, between-align.
    pub cells: Vec<QuadrantCell>,
}

impl QuadrantSummary {
    pub fn cell(&self, q: AgreementQuadrant) -> &QuadrantCell {
        self.cells
            .iter()
            .find(|c| c.quadrant == q)
            .expect("every quadrant has a cell")
    }
}

pub fn summarize_quadrants(pairs: &[PairComparison]) -> Result<QuadrantSummary, AnalyticsError> {
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let ordered = canonical_order(pairs);
    let n = pairs.len();
    let cells = AgreementQuadrant::ALL
        .iter()
        .map(|&q| {
            let cs: Vec<f64> = ordered.iter().filter(|p| p.quadrant == q).map(|p| p.cs).collect();
            let ci = stats::mean_ci(&cs);
            QuadrantCell {
                quadrant: q,
                count: cs.len(),
                proportion: cs.len() as f64 / n as f64,
                proportion_ci: stats::proportion_ci(cs.len(), n),
                mean_cs: ci.map(|c| c.0),
                mean_ci: ci.map(|c| (c.1, c.2)),
            }
        })
        .collect();
    Ok(QuadrantSummary { n, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub n: usize,
    /// Spearman correlation of cs with binary label agreement.
    pub rank: RankCorrelation,
    /// Agreement group (a) against disagreement group (b).
    pub welch: WelchTest,
    pub agreement: GroupStats,
    pub disagreement: GroupStats,
}

pub fn validation_stats(
    pairs: &[PairComparison],
    resamples: usize,
    seed: u64,
) -> Result<ValidationStats, AnalyticsError> {
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let ordered = canonical_order(pairs);
    let cs: Vec<f64> = ordered.iter().map(|p| p.cs).collect();
    let agree: Vec<f64> = ordered
        .iter()
        .map(|p| if p.label_agreement { 1.0 } else { 0.0 })
        .collect();
    let rank = rank_correlation(&cs, &agree, resamples, seed)?;
    let (a, b): (Vec<&PairComparison>, Vec<&PairComparison>) =
        ordered.iter().partition(|p| p.label_agreement);
    let a: Vec<f64> = a.iter().map(|p| p.cs).collect();
    let b: Vec<f64> = b.iter().map(|p| p.cs).collect();
    let welch = stats::welch_test(&a, &b)?;
    Ok(ValidationStats {
        n: pairs.len(),
        rank,
        agreement: welch.group_a,
        disagreement: welch.group_b,
        welch,
    })
}

/// Spearman's rho of `cs_values` against 0/1 agreement with a bootstrap CI.
pub fn rank_correlation(
    cs_values: &[f64],
    agreement: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<RankCorrelation, AnalyticsError> {
    if cs_values.len() != agreement.len() {
        return Err(StatsError::LengthMismatch.into());
    }
    Ok(stats::spearman_bootstrap(cs_values, agreement, resamples, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeDistribution {
    pub code: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub median: Option<f64>,
    /// Counts over `[0, 1]` in equal-width bins.
    pub histogram: Vec<usize>,
    pub reference_kappa: Option<f64>,
}

pub fn distribution_by_code(pairs: &[PairComparison], cb: &Codebook) -> Vec<CodeDistribution> {
    let ordered = canonical_order(pairs);
    cb.codes()
        .iter()
        .map(|code| {
            let xs: Vec<f64> = ordered
                .iter()
                .filter_map(|p| p.per_code_cs.as_ref()?.get(&code.name))
                .collect();
            let has = !xs.is_empty();
            CodeDistribution {
                code: code.name.clone(),
                n: xs.len(),
                mean: stats::mean(&xs),
                sd: has.then(|| stats::std_dev(&xs)),
                median: stats::median(&xs),
                histogram: stats::histogram(&xs, DISTRIBUTION_BINS, 0.0, 1.0),
                reference_kappa: code.reference_kappa,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCell {
    pub temperature: f64,
    pub label_agreement: bool,
    pub stats: BoxStats,
}

/// Box-plot statistics per (temperature, agreement) cell, ordered by
/// temperature then agreement-first.
pub fn temperature_summary(pairs: &[PairComparison]) -> Vec<TemperatureCell> {
    let ordered = canonical_order(pairs);
    let mut temps: Vec<f64> = ordered.iter().map(|p| p.temperature).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let mut out = Vec::new();
    for t in temps {
        for agreement in [true, false] {
            let xs: Vec<f64> = ordered
                .iter()
                .filter(|p| p.temperature.to_bits() == t.to_bits() && p.label_agreement == agreement)
                .map(|p| p.cs)
                .collect();
            if let Some(stats) = stats::box_stats(&xs) {
                out.push(TemperatureCell {
                    temperature: t,
                    label_agreement: agreement,
                    stats,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "tau", rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed(f64),
    Otsu,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Fixed(DEFAULT_TAU)
    }
}

pub fn select_threshold(cs_values: &[f64], mode: ThresholdMode) -> Result<f64, AnalyticsError> {
    match mode {
        ThresholdMode::Fixed(tau) if tau > 0.0 && tau < 1.0 => Ok(tau),
        ThresholdMode::Fixed(tau) => Err(AnalyticsError::InvalidThreshold(tau)),
        ThresholdMode::Otsu => Ok(stats::otsu_threshold(cs_values, OTSU_BINS)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::normalize_decision;
    use crate::embedding::HashedBagProvider;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn turn(agent: AgentId, reasoning: &str, codes: &[&str]) -> ParsedTurn {
        let cb = Codebook::tutoring();
        ParsedTurn {
            turn_id: TurnId(agent as u64),
            agent,
            round: Round::Round1,
            reasoning: reasoning.into(),
            explanation: "because".into(),
            decision: normalize_decision(codes.iter().map(|c| (*c, true)), &cb).unwrap(),
            parse_flags: BTreeSet::new(),
        }
    }

    fn pair(q: AgreementQuadrant, cs: f64) -> PairComparison {
        PairComparison {
            segment_id: "s".into(),
            run_id: "r".into(),
            round: Round::Round1,
            temperature: 0.0,
            agent_pair: (AgentId::CoderA, AgentId::CoderB),
            turn_ids: (TurnId(0), TurnId(1)),
            cs,
            per_code_cs: None,
            label_agreement: q.label_agreement(),
            quadrant: q,
            tau: DEFAULT_TAU,
            degraded: false,
            truncated: false,
        }
    }

    #[test]
    fn identical_turns_are_within_align() {
        let cb = Codebook::tutoring();
        let p = HashedBagProvider::default();
        let a = turn(AgentId::CoderA, "Greeting: says hello. Instruction: no.", &["Greeting"]);
        let b = turn(AgentId::CoderB, "Greeting: says hello. Instruction: no.", &["Greeting"]);
        let ctx = PairContext { run_id: "r", temperature: 0.5 };
        let c = compare_pair(
            SegmentTurn { segment_id: "s1", turn: &a },
            SegmentTurn { segment_id: "s1", turn: &b },
            ctx,
            &p,
            &cb,
            DEFAULT_TAU,
        )
        .unwrap();
        assert!((c.cs - 1.0).abs() < 1e-12);
        assert!(c.label_agreement);
        assert_eq!(c.quadrant, AgreementQuadrant::WithinAlign);
        let per = c.per_code_cs.unwrap();
        assert_eq!(per.0.len(), 2);
        assert!((per.get("Instruction").unwrap() - 1.0).abs() < 1e-12);

        let err = compare_pair(
            SegmentTurn { segment_id: "s1", turn: &a },
            SegmentTurn { segment_id: "s2", turn: &b },
            ctx,
            &p,
            &cb,
            DEFAULT_TAU,
        );
        assert_eq!(err.unwrap_err(), AnalyticsError::SegmentMismatch);
    }

    #[test]
    fn degraded_turns_use_explanations() {
        let cb = Codebook::tutoring();
        let p = HashedBagProvider::default();
        let a = turn(AgentId::CoderA, "", &["Greeting"]);
        let b = turn(AgentId::CoderB, "Greeting: hi", &["Instruction"]);
        let c = compare_pair(
            SegmentTurn { segment_id: "s", turn: &a },
            SegmentTurn { segment_id: "s", turn: &b },
            PairContext { run_id: "r", temperature: 0.0 },
            &p,
            &cb,
            DEFAULT_TAU,
        )
        .unwrap();
        assert!(c.degraded);
        assert!(c.per_code_cs.is_none());
        assert!(!c.label_agreement);
        assert_eq!(c.quadrant, AgreementQuadrant::BetweenAlign);
    }

    #[test]
    fn quadrant_examples() {
        assert_eq!(
            pair(AgreementQuadrant::WithinAlign, 0.90).with_tau(0.94).quadrant,
            AgreementQuadrant::WithinMisalign
        );
        assert_eq!(
            pair(AgreementQuadrant::BetweenMisalign, 0.96).with_tau(0.94).quadrant,
            AgreementQuadrant::BetweenAlign
        );
    }

    #[test]
    fn summary_degenerate_inputs() {
        let s = summarize_quadrants(&[pair(AgreementQuadrant::WithinAlign, 0.97)]).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.cell(AgreementQuadrant::WithinAlign).proportion, 1.0);
        assert_eq!(s.cell(AgreementQuadrant::BetweenAlign).count, 0);
        assert_eq!(s.cell(AgreementQuadrant::BetweenAlign).mean_cs, None);

        let s = summarize_quadrants(&[
            pair(AgreementQuadrant::WithinAlign, 0.97),
            pair(AgreementQuadrant::BetweenMisalign, 0.8),
        ])
        .unwrap();
        assert_eq!(s.cell(AgreementQuadrant::WithinAlign).proportion, 0.5);
        assert_eq!(s.cell(AgreementQuadrant::BetweenMisalign).proportion, 0.5);
        assert_eq!(summarize_quadrants(&[]), Err(AnalyticsError::EmptyInput));
    }

    #[test]
    fn thresholds() {
        assert_eq!(select_threshold(&[], ThresholdMode::default()).unwrap(), 0.94);
        assert_eq!(
            select_threshold(&[], ThresholdMode::Fixed(1.0)),
            Err(AnalyticsError::InvalidThreshold(1.0))
        );
        let mut xs = vec![0.85; 100];
        xs.extend(vec![0.97; 100]);
        let t = select_threshold(&xs, ThresholdMode::Otsu).unwrap();
        assert!(t > 0.85 && t < 0.97);
        assert_eq!(
            select_threshold(&[0.9; 5], ThresholdMode::Otsu),
            Err(AnalyticsError::Stats(StatsError::DegenerateInput))
        );
    }

    #[test]
    fn point_mass_distribution() {
        let cb = Codebook::tutoring();
        let mut pairs = Vec::new();
        for _ in 0..10 {
            let mut p = pair(AgreementQuadrant::WithinAlign, 0.99);
            p.per_code_cs = Some(CodeScores(vec![("Greeting".into(), 0.99)]));
            pairs.push(p);
        }
        let d = distribution_by_code(&pairs, &cb);
        assert_eq!(d.len(), 8);
        assert_eq!(d[0].n, 10);
        assert_eq!(d[0].histogram[49], 10);
        assert!(d[0].sd.unwrap() < 1e-12);
        assert_eq!(d[0].reference_kappa, Some(0.85));
        assert_eq!(d[1].n, 0);
        assert_eq!(d[1].mean, None);
    }

    #[test]
    fn code_scores_keep_order() {
        let s = CodeScores(vec![("b".into(), 0.5), ("a".into(), 0.25)]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"b":0.5,"a":0.25}"#);
        assert_eq!(serde_json::from_str::<CodeScores>(&json).unwrap(), s);
    }
}
