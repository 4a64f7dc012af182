//! Core model, parsing and analytics for multi-agent qualitative coding.
//!
//! Everything here is pure and allocation-only; IO, HTTP and the CLI live
//! in the `rtrc` crate.

#![no_std]
extern crate alloc;

pub mod analytics;
pub mod codebook;
pub mod decision;
pub mod embedding;
pub mod model;
pub mod parser;
pub mod prompt;
pub mod protocol;
pub mod stats;
pub mod triage;
pub mod units;

pub use codebook::{load_codebook, Code, Codebook, CodebookError};
pub use decision::{normalize_decision, DecisionError, DecisionMap};
pub use model::{AgentId, AgreementQuadrant, Round, Segment, Speaker, TurnId};
pub use parser::{parse_turn, parse_turn_with, ParseError, ParseFlag, ParseMode, ParsedTurn, TurnMeta};
pub use units::{extract_reasoning_units, Polarity, ReasoningUnit};
