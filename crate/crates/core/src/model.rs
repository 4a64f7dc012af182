//! Identifiers and small value types shared across the crate.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Tutor,
    Student,
    Other,
}

/// One dialogue line to be coded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub session_id: String,
    pub speaker: Speaker,
    pub text: String,
    pub index_in_session: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    CoderA,
    CoderB,
    Consensus,
}

impl AgentId {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::CoderA => "coder_a",
            AgentId::CoderB => "coder_b",
            AgentId::Consensus => "consensus",
        }
    }

    /// The other discussion agent; consensus has no peer.
    pub fn peer(self) -> Option<AgentId> {
        match self {
            AgentId::CoderA => Some(AgentId::CoderB),
            AgentId::CoderB => Some(AgentId::CoderA),
            AgentId::Consensus => None,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Round1,
    Round2,
    Consensus,
}

impl Round {
    pub fn as_str(self) -> &'static str {
        match self {
            Round::Round1 => "round1",
            Round::Round2 => "round2",
            Round::Consensus => "consensus",
        }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run-unique turn identifier; also the record key in the embedding store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TurnId(pub u64);

impl TurnId {
    /// Slots reserved per segment; a discussion never has more than five turns.
    pub const PER_SEGMENT: u64 = 8;

    pub fn for_segment(ordinal: u64, position: u64) -> TurnId {
        TurnId(ordinal * Self::PER_SEGMENT + position)
    }
}

impl fmt::Display for TurnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Label agreement crossed with rationale similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementQuadrant {
    WithinAlign,
    WithinMisalign,
    BetweenAlign,
    BetweenMisalign,
}

impl AgreementQuadrant {
    pub const ALL: [AgreementQuadrant; 4] = [
        AgreementQuadrant::WithinAlign,
        AgreementQuadrant::BetweenMisalign,
        AgreementQuadrant::WithinMisalign,
        AgreementQuadrant::BetweenAlign,
    ];

    pub fn classify(label_agreement: bool, cs: f64, tau: f64) -> AgreementQuadrant {
        match (label_agreement, cs >= tau) {
            (true, true) => AgreementQuadrant::WithinAlign,
            (true, false) => AgreementQuadrant::WithinMisalign,
            (false, true) => AgreementQuadrant::BetweenAlign,
            (false, false) => AgreementQuadrant::BetweenMisalign,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementQuadrant::WithinAlign => "within_align",
            AgreementQuadrant::WithinMisalign => "within_misalign",
            AgreementQuadrant::BetweenAlign => "between_align",
            AgreementQuadrant::BetweenMisalign => "between_misalign",
        }
    }

    pub fn label_agreement(self) -> bool {
        matches!(self, AgreementQuadrant::WithinAlign | AgreementQuadrant::WithinMisalign)
    }
}

impl fmt::Display for AgreementQuadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
