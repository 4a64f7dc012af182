//! Decomposes a raw agent turn into reasoning trace, explanation and decision.
//!
//! A turn is expected to look like
//!
//! ```text
//! <think> ...reasoning... </think>
//! short explanation
//! {'Greeting': 1, 'Instruction': 0}
//! ```
//!
//! The decision grammar is a brace-delimited map with single- or
//! double-quoted keys and `0`/`1`/`true`/`false` values. Trailing commas and
//! surrounding prose are tolerated. The last well-formed map after the think
//! block is the decision, so a revised map wins over a quoted earlier one.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::decision::{normalize_decision, DecisionError, DecisionMap};
use crate::model::{AgentId, Round, TurnId};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Recoveries applied while parsing a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParseFlag {
    /// No `<think>`/`</think>` pair; reasoning is empty.
    MissingThinkBlock,
    /// The decision map had a trailing comma before `}`.
    RecoveredTrailingComma,
    /// At least one key of the decision map used single quotes.
    SingleQuoteMap,
    /// Non-whitespace text follows the decision map.
    ProseAroundMap,
}

impl ParseFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseFlag::MissingThinkBlock => "MissingThinkBlock",
            ParseFlag::RecoveredTrailingComma => "RecoveredTrailingComma",
            ParseFlag::SingleQuoteMap => "SingleQuoteMap",
            ParseFlag::ProseAroundMap => "ProseAroundMap",
        }
    }
}

impl fmt::Display for ParseFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty turn")]
    EmptyInput,
    #[error("no <think>...</think> block")]
    MissingThinkBlock,
    #[error("no parseable decision map")]
    MissingDecision,
    #[error(transparent)]
    UnknownCode(#[from] DecisionError),
    #[error("round {round} cannot be produced by agent {agent}")]
    RoundAgentMismatch { agent: AgentId, round: Round },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::EmptyInput => "EmptyInput",
            ParseError::MissingThinkBlock => "MissingThinkBlock",
            ParseError::MissingDecision => "MissingDecision",
            ParseError::UnknownCode(_) => "UnknownCode",
            ParseError::RoundAgentMismatch { .. } => "RoundAgentMismatch",
        }
    }
}

/// Whether a turn without a think block is kept (with empty reasoning) or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnMeta {
    pub turn_id: TurnId,
    pub agent: AgentId,
    pub round: Round,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub turn_id: TurnId,
    pub agent: AgentId,
    pub round: Round,
    pub reasoning: String,
    pub explanation: String,
    pub decision: DecisionMap,
    pub parse_flags: BTreeSet<ParseFlag>,
}

impl ParsedTurn {
    pub fn is_degraded(&self) -> bool {
        self.reasoning.is_empty()
    }

    /// Canonical raw form: think block, explanation, JSON decision map.
    pub fn render(&self) -> String {
        let decision = serde_json::to_string(&self.decision).expect("decision map serializes");
        if self.reasoning.is_empty() {
            format!("{}\n\n{decision}", self.explanation)
        } else {
            format!(
                "{THINK_OPEN}\n{}\n{THINK_CLOSE}\n\n{}\n\n{decision}",
                self.reasoning, self.explanation
            )
        }
    }
}

pub fn parse_turn(raw: &str, cb: &Codebook, meta: TurnMeta) -> Result<ParsedTurn, ParseError> {
    parse_turn_with(raw, cb, meta, ParseMode::Degraded)
}

pub fn parse_turn_with(
    raw: &str,
    cb: &Codebook,
    meta: TurnMeta,
    mode: ParseMode,
) -> Result<ParsedTurn, ParseError> {
    if (meta.round == Round::Consensus) != (meta.agent == AgentId::Consensus) {
        return Err(ParseError::RoundAgentMismatch {
            agent: meta.agent,
            round: meta.round,
        });
    }
    if raw.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }

    let mut flags = BTreeSet::new();
    let (reasoning, tail) = match find_think_block(raw) {
        Some((inner, after)) => (inner.trim(), &raw[after..]),
        None => {
            if mode == ParseMode::Strict {
                return Err(ParseError::MissingThinkBlock);
            }
            flags.insert(ParseFlag::MissingThinkBlock);
            ("", raw)
        }
    };

    let map = last_decision_map(tail).ok_or(ParseError::MissingDecision)?;
    if map.single_quoted {
        flags.insert(ParseFlag::SingleQuoteMap);
    }
    if map.trailing_comma {
        flags.insert(ParseFlag::RecoveredTrailingComma);
    }
    let after = tail[map.end..].trim_matches(|c: char| c.is_whitespace() || c == '`');
    if !after.is_empty() {
        flags.insert(ParseFlag::ProseAroundMap);
    }

    let decision = normalize_decision(map.entries, cb)?;
    Ok(ParsedTurn {
        turn_id: meta.turn_id,
        agent: meta.agent,
        round: meta.round,
        reasoning: reasoning.to_string(),
        explanation: strip_fence_opener(&tail[..map.start]).to_string(),
        decision,
        parse_flags: flags,
    })
}

/// Returns the inner text of the first `<think>...</think>` pair and the byte
/// offset just past the closing tag. Tags match ASCII case-insensitively.
fn find_think_block(raw: &str) -> Option<(&str, usize)> {
    let open = find_ascii_ci(raw, THINK_OPEN, 0)?;
    let inner_start = open + THINK_OPEN.len();
    let close = find_ascii_ci(raw, THINK_CLOSE, inner_start)?;
    Some((&raw[inner_start..close], close + THINK_CLOSE.len()))
}

fn find_ascii_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn strip_fence_opener(text: &str) -> &str {
    let t = text.trim();
    if let Some(pos) = t.rfind("```") {
        let tag = &t[pos + 3..];
        if tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            return t[..pos].trim();
        }
    }
    t
}

#[derive(Debug)]
struct RawMap {
    start: usize,
    end: usize,
    entries: Vec<(String, bool)>,
    single_quoted: bool,
    trailing_comma: bool,
}

fn last_decision_map(text: &str) -> Option<RawMap> {
    text.char_indices()
        .rev()
        .filter(|&(_, c)| c == '{')
        .find_map(|(i, _)| MapScanner::new(text, i).scan())
}

struct MapScanner<'a> {
    src: &'a str,
    pos: usize,
    start: usize,
}

impl<'a> MapScanner<'a> {
    fn new(src: &'a str, start: usize) -> Self {
        MapScanner { src, pos: start, start }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn eat(&mut self, want: char) -> bool {
        if self.peek() == Some(want) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn scan(mut self) -> Option<RawMap> {
        if !self.eat('{') {
            return None;
        }
        let mut entries = Vec::new();
        let mut single_quoted = false;
        let mut trailing_comma = false;
        loop {
            self.skip_ws();
            if self.eat('}') {
                break;
            }
            if !entries.is_empty() {
                if !self.eat(',') {
                    return None;
                }
                self.skip_ws();
                if self.eat('}') {
                    trailing_comma = true;
                    break;
                }
            }
            let (key, single) = self.key()?;
            single_quoted |= single;
            self.skip_ws();
            if !self.eat(':') {
                return None;
            }
            self.skip_ws();
            let value = self.value()?;
            entries.push((key, value));
        }
        if entries.is_empty() {
            return None;
        }
        Some(RawMap {
            start: self.start,
            end: self.pos,
            entries,
            single_quoted,
            trailing_comma,
        })
    }

    fn key(&mut self) -> Option<(String, bool)> {
        let quote = match self.peek()? {
            q @ ('"' | '\'') => q,
            _ => return None,
        };
        self.bump();
        let mut key = String::new();
        loop {
            match self.bump()? {
                '\\' => key.push(self.bump()?),
                c if c == quote => break,
                '\n' => return None,
                c => key.push(c),
            }
        }
        Some((key, quote == '\''))
    }

    fn value(&mut self) -> Option<bool> {
        let rest = &self.src[self.pos..];
        let word_len = rest
            .find(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .unwrap_or(rest.len());
        let value = match &rest[..word_len] {
            "1" => true,
            "0" => false,
            w if w.eq_ignore_ascii_case("true") => true,
            w if w.eq_ignore_ascii_case("false") => false,
            _ => return None,
        };
        self.pos += word_len;
        Some(value)
    }
}
