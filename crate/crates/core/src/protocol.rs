//! The per-segment discussion protocol as a pure state machine.
//!
//! 1. Both coders code the segment independently (round 1).
//! 2. Identical decision maps end the discussion (`round1_consensus`).
//! 3. Otherwise each coder sees the peer's round-1 output and revises
//!    (round 2). Identical maps end it (`round2_consensus`).
//! 4. Otherwise the consensus agent reads all four coder turns and its
//!    decision is final (`arbitrated`).
//!
//! The driver asks [`Discussion::next_step`] what to request, sends it to a
//! model, and feeds the raw reply to [`Discussion::record`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::decision::DecisionMap;
use crate::model::{AgentId, Round, TurnId};
use crate::parser::{parse_turn_with, ParseError, ParseMode, ParsedTurn, TurnMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Round1Consensus,
    Round2Consensus,
    Arbitrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiscussion {
    pub segment_id: String,
    pub run_id: String,
    pub turns: Vec<ParsedTurn>,
    pub final_decision: DecisionMap,
    pub outcome: Outcome,
}

impl SegmentDiscussion {
    /// Checks the turn-count and final-decision invariants.
    pub fn is_consistent(&self) -> bool {
        let coders = |round| self.turns.iter().filter(|t| t.round == round && t.agent != AgentId::Consensus).count();
        match self.outcome {
            Outcome::Round1Consensus => {
                self.turns.len() == 2
                    && coders(Round::Round1) == 2
                    && self.turns.iter().all(|t| t.decision == self.final_decision)
            }
            Outcome::Round2Consensus => {
                self.turns.len() == 4
                    && coders(Round::Round2) == 2
                    && self.turns[2..].iter().all(|t| t.decision == self.final_decision)
            }
            Outcome::Arbitrated => {
                self.turns.len() == 5
                    && coders(Round::Round2) == 2
                    && self.turns[4].agent == AgentId::Consensus
                    && self.turns[4].decision == self.final_decision
            }
        }
    }

    /// Coder turn pairs that are compared: one per coder round.
    pub fn coder_pairs(&self) -> impl Iterator<Item = (&ParsedTurn, &ParsedTurn)> {
        self.turns
            .chunks(2)
            .filter(|c| c.len() == 2 && c[0].agent == AgentId::CoderA && c[1].agent == AgentId::CoderB)
            .map(|c| (&c[0], &c[1]))
    }
}

/// What the driver should request next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnRequest {
    pub turn_id: TurnId,
    pub agent: AgentId,
    pub round: Round,
    /// Turn position within the discussion, 0-based.
    pub position: usize,
    pub peer_output: Option<String>,
}

impl TurnRequest {
    /// Stable key used by scripted and replay backends.
    pub fn request_key(&self, segment_id: &str) -> String {
        format!("{segment_id}/{}/{}", self.round, self.agent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Request(TurnRequest),
    Finished(SegmentDiscussion),
}

#[derive(Debug, Clone)]
pub struct Discussion {
    segment_id: String,
    run_id: String,
    ordinal: u64,
    raw: Vec<String>,
    turns: Vec<ParsedTurn>,
    mode: ParseMode,
}

const SCHEDULE: [(AgentId, Round); 5] = [
    (AgentId::CoderA, Round::Round1),
    (AgentId::CoderB, Round::Round1),
    (AgentId::CoderA, Round::Round2),
    (AgentId::CoderB, Round::Round2),
    (AgentId::Consensus, Round::Consensus),
];

impl Discussion {
    /// `ordinal` is the segment's position in the run, used for turn ids.
    pub fn new(segment_id: impl Into<String>, run_id: impl Into<String>, ordinal: u64) -> Self {
        Discussion {
            segment_id: segment_id.into(),
            run_id: run_id.into(),
            ordinal,
            raw: Vec::new(),
            turns: Vec::new(),
            mode: ParseMode::Degraded,
        }
    }

    pub fn with_parse_mode(mut self, mode: ParseMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn turns(&self) -> &[ParsedTurn] {
        &self.turns
    }

    pub fn raw_turns(&self) -> &[String] {
        &self.raw
    }

    pub fn next_step(&self) -> Step {
        let n = self.turns.len();
        let done = |outcome, final_decision: &DecisionMap| {
            Step::Finished(SegmentDiscussion {
                segment_id: self.segment_id.clone(),
                run_id: self.run_id.clone(),
                turns: self.turns.clone(),
                final_decision: final_decision.clone(),
                outcome,
            })
        };
        match n {
            2 if self.turns[0].decision == self.turns[1].decision => {
                return done(Outcome::Round1Consensus, &self.turns[0].decision)
            }
            4 if self.turns[2].decision == self.turns[3].decision => {
                return done(Outcome::Round2Consensus, &self.turns[2].decision)
            }
            5 => return done(Outcome::Arbitrated, &self.turns[4].decision),
            _ => {}
        }
        let (agent, round) = SCHEDULE[n];
        let peer_output = match n {
            0 | 1 => None,
            // each coder sees the other's round-1 output
            2 => Some(self.raw[1].clone()),
            3 => Some(self.raw[0].clone()),
            _ => Some(self.consensus_brief()),
        };
        Step::Request(TurnRequest {
            turn_id: TurnId::for_segment(self.ordinal, n as u64),
            agent,
            round,
            position: n,
            peer_output,
        })
    }

    fn consensus_brief(&self) -> String {
        let mut out = String::new();
        for (i, raw) in self.raw.iter().enumerate().take(4) {
            let (agent, round) = SCHEDULE[i];
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(&format!("[{agent}, {round}]\n{raw}"));
        }
        out
    }

    /// Parses and stores the reply to the pending request. On error nothing
    /// is stored and the discussion cannot continue meaningfully; drivers
    /// keep their own copy of the raw text.
    pub fn record(&mut self, raw: String, cb: &Codebook) -> Result<&ParsedTurn, ParseError> {
        let Step::Request(req) = self.next_step() else {
            panic!("record called on a finished discussion");
        };
        let parsed = parse_turn_with(
            &raw,
            cb,
            TurnMeta {
                turn_id: req.turn_id,
                agent: req.agent,
                round: req.round,
            },
            self.mode,
        )?;
        self.raw.push(raw);
        self.turns.push(parsed);
        Ok(self.turns.last().expect("just pushed"))
    }
}
