//! Agent personas and prompt rendering.
//!
//! Templates are plain text with `{name}` placeholders:
//!
//! | placeholder     | value                                         |
//! |-----------------|-----------------------------------------------|
//! | `{style}`       | the persona's style descriptor                |
//! | `{codebook}`    | every code with its definition and examples   |
//! | `{code_names}`  | comma-separated code names                    |
//! | `{segment}`     | the segment text                              |
//! | `{segment_id}`  | the segment id                                |
//! | `{speaker}`     | `tutor`, `student` or `other`                 |
//! | `{peer_output}` | peer turn(s), verbatim                        |
//!
//! Anything else in braces is left alone, so templates can show example
//! dictionaries. Substituted values are never re-scanned.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::model::{AgentId, Round, Segment, Speaker};

pub const DEFAULT_CODER_TEMPLATE: &str = include_str!("../data/prompts/coder.txt");
pub const DEFAULT_CONSENSUS_TEMPLATE: &str = include_str!("../data/prompts/consensus.txt");
pub const DEFAULT_ROUND1_TEMPLATE: &str = include_str!("../data/prompts/round1.txt");
pub const DEFAULT_ROUND2_TEMPLATE: &str = include_str!("../data/prompts/round2.txt");
pub const DEFAULT_CONSENSUS_USER_TEMPLATE: &str = include_str!("../data/prompts/consensus_user.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{0} prompt needs the peer output")]
    MissingPeerOutput(Round),
    #[error("persona {agent} cannot take part in {round}")]
    PersonaRoundMismatch { agent: AgentId, round: Round },
    #[error("coder personas must have distinct styles")]
    IndistinctPersonas,
    #[error("template for {0} lacks a {{peer_output}} slot")]
    MissingPeerSlot(&'static str),
    #[error("persona set has {0} in the wrong slot")]
    WrongSlot(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPersona {
    pub id: AgentId,
    pub style_descriptor: String,
    pub system_prompt_template: String,
}

/// Per-round user-message templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTemplates {
    pub round1: String,
    pub round2: String,
    pub consensus: String,
}

impl Default for RoundTemplates {
    fn default() -> Self {
        RoundTemplates {
            round1: DEFAULT_ROUND1_TEMPLATE.to_string(),
            round2: DEFAULT_ROUND2_TEMPLATE.to_string(),
            consensus: DEFAULT_CONSENSUS_USER_TEMPLATE.to_string(),
        }
    }
}

/// The three personas of a discussion plus the round templates, validated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub coder_a: AgentPersona,
    pub coder_b: AgentPersona,
    pub consensus: AgentPersona,
    pub rounds: RoundTemplates,
}

impl Default for PromptSet {
    fn default() -> Self {
        let persona = |id, style: &str, template: &str| AgentPersona {
            id,
            style_descriptor: style.to_string(),
            system_prompt_template: template.to_string(),
        };
        PromptSet {
            coder_a: persona(AgentId::CoderA, "bold", DEFAULT_CODER_TEMPLATE),
            coder_b: persona(AgentId::CoderB, "empathetic", DEFAULT_CODER_TEMPLATE),
            consensus: persona(AgentId::Consensus, "neutral, balanced", DEFAULT_CONSENSUS_TEMPLATE),
            rounds: RoundTemplates::default(),
        }
    }
}

impl PromptSet {
    pub fn validate(&self) -> Result<(), PromptError> {
        for (p, want) in [
            (&self.coder_a, AgentId::CoderA),
            (&self.coder_b, AgentId::CoderB),
            (&self.consensus, AgentId::Consensus),
        ] {
            if p.id != want {
                return Err(PromptError::WrongSlot(p.id));
            }
        }
        if self.coder_a.style_descriptor.trim() == self.coder_b.style_descriptor.trim() {
            return Err(PromptError::IndistinctPersonas);
        }
        if !self.consensus.system_prompt_template.contains("{peer_output}") {
            return Err(PromptError::MissingPeerSlot("consensus persona"));
        }
        if !self.rounds.round2.contains("{peer_output}") {
            return Err(PromptError::MissingPeerSlot("round 2"));
        }
        Ok(())
    }

    pub fn persona(&self, id: AgentId) -> &AgentPersona {
        match id {
            AgentId::CoderA => &self.coder_a,
            AgentId::CoderB => &self.coder_b,
            AgentId::Consensus => &self.consensus,
        }
    }

    pub fn render(
        &self,
        agent: AgentId,
        round: Round,
        cb: &Codebook,
        seg: &Segment,
        peer_output: Option<&str>,
    ) -> Result<Vec<Message>, PromptError> {
        render_prompt(self.persona(agent), round, &self.rounds, cb, seg, peer_output)
    }
}

/// Renders the system and user messages for one turn.
pub fn render_prompt(
    persona: &AgentPersona,
    round: Round,
    rounds: &RoundTemplates,
    cb: &Codebook,
    seg: &Segment,
    peer_output: Option<&str>,
) -> Result<Vec<Message>, PromptError> {
    if (round == Round::Consensus) != (persona.id == AgentId::Consensus) {
        return Err(PromptError::PersonaRoundMismatch {
            agent: persona.id,
            round,
        });
    }
    let needs_peer = round != Round::Round1;
    let peer = match (needs_peer, peer_output) {
        (true, None) => return Err(PromptError::MissingPeerOutput(round)),
        (true, Some(p)) => p,
        (false, _) => "",
    };
    let codebook = render_codebook(cb);
    let code_names = cb.names().collect::<Vec<_>>().join(", ");
    let speaker = match seg.speaker {
        Speaker::Tutor => "tutor",
        Speaker::Student => "student",
        Speaker::Other => "other",
    };
    let vars: [(&str, &str); 7] = [
        ("style", &persona.style_descriptor),
        ("codebook", &codebook),
        ("code_names", &code_names),
        ("segment", &seg.text),
        ("segment_id", &seg.id),
        ("speaker", speaker),
        ("peer_output", peer),
    ];
    let user_template = match round {
        Round::Round1 => &rounds.round1,
        Round::Round2 => &rounds.round2,
        Round::Consensus => &rounds.consensus,
    };
    Ok(vec![
        Message {
            role: Role::System,
            content: substitute(&persona.system_prompt_template, &vars),
        },
        Message {
            role: Role::User,
            content: substitute(user_template, &vars),
        },
    ])
}

pub fn render_codebook(cb: &Codebook) -> String {
    let mut out = String::new();
    for code in cb.codes() {
        out.push_str(&format!("- {}: {}", code.name, code.definition));
        if !code.examples.is_empty() {
            let ex: Vec<String> = code.examples.iter().map(|e| format!("\"{e}\"")).collect();
            out.push_str(&format!(" Examples: {}.", ex.join("; ")));
        }
        out.push('\n');
    }
    out.truncate(out.trim_end().len());
    out
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        let replaced = (after[name_len..].starts_with('}'))
            .then(|| vars.iter().find(|(k, _)| *k == &after[..name_len]))
            .flatten();
        match replaced {
            Some((_, v)) => {
                out.push_str(v);
                rest = &after[name_len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg() -> Segment {
        Segment {
            id: "s-1".into(),
            session_id: "A".into(),
            speaker: Speaker::Tutor,
            text: "Hello, {peer_output} how are you?".into(),
            index_in_session: 0,
        }
    }

    #[test]
    fn coder_prompt_contains_codebook_and_segment() {
        let cb = Codebook::tutoring();
        let ps = PromptSet::default();
        ps.validate().unwrap();
        let msgs = ps.render(AgentId::CoderA, Round::Round1, &cb, &seg(), None).unwrap();
        let all: String = msgs.iter().map(|m| m.content.as_str()).collect();
        for code in cb.codes() {
            assert!(all.contains(&code.definition), "{}", code.name);
        }
        assert!(all.contains("Hello, {peer_output} how are you?"));
        assert!(all.contains("bold"));
        assert!(all.contains("{'Greeting': 1, 'Instruction': 0}"));
    }

    #[test]
    fn consensus_prompt_embeds_both_outputs() {
        let cb = Codebook::tutoring();
        let ps = PromptSet::default();
        let peers = "[coder_a]\n<think>a</think> {'Greeting': 1}\n\n[coder_b]\n<think>b</think> {'Instruction': 1}";
        let msgs = ps
            .render(AgentId::Consensus, Round::Consensus, &cb, &seg(), Some(peers))
            .unwrap();
        assert!(msgs[0].content.contains(peers));
        assert_eq!(
            ps.render(AgentId::Consensus, Round::Consensus, &cb, &seg(), None),
            Err(PromptError::MissingPeerOutput(Round::Consensus))
        );
        assert_eq!(
            ps.render(AgentId::CoderA, Round::Round2, &cb, &seg(), None),
            Err(PromptError::MissingPeerOutput(Round::Round2))
        );
        assert!(matches!(
            ps.render(AgentId::CoderA, Round::Consensus, &cb, &seg(), Some("x")),
            Err(PromptError::PersonaRoundMismatch { .. })
        ));
    }

    #[test]
    fn rendering_is_pure() {
        let cb = Codebook::tutoring();
        let ps = PromptSet::default();
        let a = ps.render(AgentId::CoderB, Round::Round2, &cb, &seg(), Some("peer")).unwrap();
        let b = ps.render(AgentId::CoderB, Round::Round2, &cb, &seg(), Some("peer")).unwrap();
        assert_eq!(a, b);
        assert!(a[1].content.contains("peer"));
    }

    #[test]
    fn persona_invariants() {
        let mut ps = PromptSet::default();
        ps.coder_b.style_descriptor = "bold".into();
        assert_eq!(ps.validate(), Err(PromptError::IndistinctPersonas));
        let mut ps = PromptSet::default();
        ps.consensus.system_prompt_template = "no slot".into();
        assert!(matches!(ps.validate(), Err(PromptError::MissingPeerSlot(_))));
    }

    #[test]
    fn substitution_leaves_unknown_braces() {
        let out = substitute("{a} {b} {'x': 1} {", &[("a", "{b}"), ("b", "B")]);
        assert_eq!(out, "{b} B {'x': 1} {");
    }
}
