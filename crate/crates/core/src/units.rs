//! Splits a reasoning trace into per-code justification spans.
//!
//! The trace is scanned for mentions of code names and aliases (ASCII
//! case-insensitive, on word boundaries, plural `s` allowed). Consecutive
//! mentions of the same code form one span, and a span runs until the next
//! mention of a different code. Offsets are in characters, not bytes.
//!
//! Polarity is decided from the clause around the first mention: any
//! negation cue gives [`Polarity::Rejects`], otherwise any hedge gives
//! [`Polarity::Uncertain`], otherwise [`Polarity::Supports`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Supports,
    Rejects,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningUnit {
    pub code_name: String,
    /// Character offset of the span start (inclusive).
    pub start: usize,
    /// Character offset of the span end (exclusive).
    pub end: usize,
    pub text: String,
    pub polarity: Polarity,
}

const NEGATIONS: &[&str] = &[
    "no", "not", "never", "none", "neither", "nor", "without", "absent", "cannot", "lacks",
    "doesnt", "isnt", "arent", "wasnt", "dont", "didnt", "cant", "wont", "shouldnt",
];

const NEGATION_PHRASES: &[&[&str]] = &[&["but", "wait"], &["does", "not"], &["do", "not"]];

const HEDGES: &[&str] = &[
    "could", "might", "may", "maybe", "perhaps", "possibly", "possible", "unclear", "uncertain",
    "unsure", "arguably", "seems", "somewhat", "ambiguous",
];

#[derive(Debug, Clone, Copy)]
struct Mention {
    code: usize,
    start: usize,
    end: usize,
}

pub fn extract_reasoning_units(reasoning: &str, cb: &Codebook) -> Vec<ReasoningUnit> {
    let chars: Vec<char> = reasoning.chars().collect();
    let mentions = find_mentions(&chars, cb);

    // group consecutive mentions of one code
    let mut groups: Vec<(Mention, Mention)> = Vec::new();
    for m in mentions {
        match groups.last_mut() {
            Some((_, last)) if last.code == m.code => *last = m,
            _ => groups.push((m, m)),
        }
    }

    let mut units = Vec::with_capacity(groups.len());
    for (i, &(first, _)) in groups.iter().enumerate() {
        let span_end = groups.get(i + 1).map_or(chars.len(), |(next, _)| next.start);
        let mut end = span_end;
        while end > first.end && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        let lookback_floor = if i == 0 { 0 } else { groups[i - 1].1.end };
        let polarity = classify(&chars, first, lookback_floor, span_end);
        units.push(ReasoningUnit {
            code_name: cb.codes()[first.code].name.clone(),
            start: first.start,
            end,
            text: chars[first.start..end].iter().collect(),
            polarity,
        });
    }
    units
}

fn find_mentions(chars: &[char], cb: &Codebook) -> Vec<Mention> {
    let mut spellings: Vec<(Vec<char>, usize)> = cb
        .codes()
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.spellings().map(move |s| (fold(s.trim()), i)))
        .filter(|(s, _)| !s.is_empty())
        .collect();
    spellings.sort_by_key(|s| core::cmp::Reverse(s.0.len()));

    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if i > 0 && chars[i - 1].is_alphanumeric() {
            i += 1;
            continue;
        }
        let hit = spellings.iter().find_map(|(s, code)| {
            let end = i + s.len();
            if end > chars.len() || !chars[i..end].iter().zip(s).all(|(&a, &b)| lower(a) == b) {
                return None;
            }
            let end = match chars.get(end) {
                Some(&c) if c == 's' || c == 'S' => end + 1,
                _ => end,
            };
            let boundary = chars.get(end).is_none_or(|c| !c.is_alphanumeric());
            boundary.then_some(Mention { code: *code, start: i, end })
        });
        match hit {
            Some(m) => {
                i = m.end;
                out.push(m);
            }
            None => i += 1,
        }
    }
    out
}

fn classify(chars: &[char], first: Mention, floor: usize, ceiling: usize) -> Polarity {
    let mut start = first.start;
    while start > floor && !is_clause_end(chars[start - 1]) {
        start -= 1;
    }
    let mut end = first.end;
    while end < ceiling && !is_clause_end(chars[end]) {
        end += 1;
    }
    let window = &chars[start..end];
    let words = words(window);

    let negated = words.iter().any(|w| NEGATIONS.contains(&w.as_str()))
        || NEGATION_PHRASES
            .iter()
            .any(|p| words.windows(p.len()).any(|w| w.iter().zip(*p).all(|(a, b)| a == b)))
        || assigns_zero(window);
    if negated {
        return Polarity::Rejects;
    }
    if words.iter().any(|w| HEDGES.contains(&w.as_str())) {
        return Polarity::Uncertain;
    }
    Polarity::Supports
}

fn is_clause_end(c: char) -> bool {
    matches!(c, '.' | ';' | '!' | '?' | '\n')
}

/// Lowercased words with apostrophes dropped, so "doesn't" becomes "doesnt".
fn words(window: &[char]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for &c in window {
        if c.is_alphanumeric() {
            cur.push(lower(c));
        } else if c == '\'' || c == '\u{2019}' {
            continue;
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// `=0`, `= 0`, `: 0` and the like, not followed by another digit or `.`.
fn assigns_zero(window: &[char]) -> bool {
    window.iter().enumerate().any(|(i, &c)| {
        if c != '=' && c != ':' {
            return false;
        }
        let mut j = i + 1;
        while j < window.len() && window[j] == ' ' {
            j += 1;
        }
        window.get(j) == Some(&'0')
            && window
                .get(j + 1)
                .is_none_or(|n| !n.is_ascii_digit() && *n != '.')
    })
}

fn lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

fn fold(s: &str) -> Vec<char> {
    s.chars().map(lower).collect()
}

/// Concatenated span text per code, in codebook order, for codes that have
/// at least one unit.
pub fn text_by_code(units: &[ReasoningUnit], cb: &Codebook) -> Vec<(String, String)> {
    cb.names()
        .filter_map(|name| {
            let parts: Vec<&str> = units
                .iter()
                .filter(|u| u.code_name == name)
                .map(|u| u.text.as_str())
                .collect();
            (!parts.is_empty()).then(|| (String::from(name), parts.join(" ")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(s: &str) -> Vec<(String, Polarity)> {
        extract_reasoning_units(s, &Codebook::tutoring())
            .into_iter()
            .map(|u| (u.code_name, u.polarity))
            .collect()
    }

    #[test]
    fn two_codes_support_and_reject() {
        let u = units("Greeting: yes, says hello. Instruction: no directive here.");
        assert_eq!(
            u,
            [
                ("Greeting".into(), Polarity::Supports),
                ("Instruction".into(), Polarity::Rejects)
            ]
        );
    }

    #[test]
    fn negation_outranks_hedge() {
        let u = units("This could be instruction, but wait it's the student speaking");
        assert_eq!(u, [("Instruction".into(), Polarity::Rejects)]);
        let u = units("This could be instruction.");
        assert_eq!(u, [("Instruction".into(), Polarity::Uncertain)]);
        let u = units("It might relate to ATP");
        assert_eq!(u, [("Aligning to Prior Knowledge".into(), Polarity::Uncertain)]);
    }

    #[test]
    fn no_mentions() {
        assert!(units("The student is solving for n.").is_empty());
    }

    #[test]
    fn spans_and_offsets() {
        let s = "Greeting: the line says hello, so Greeting=1; no task directive, Instruction=0 ...";
        let u = extract_reasoning_units(s, &Codebook::tutoring());
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].code_name, "Greeting");
        assert_eq!(u[0].polarity, Polarity::Supports);
        assert_eq!(u[0].start, 0);
        assert_eq!(u[1].code_name, "Instruction");
        assert_eq!(u[1].polarity, Polarity::Rejects);
        assert_eq!(u[1].text, "Instruction=0 ...");
        assert!(u[0].end <= u[1].start);
        let chars: Vec<char> = s.chars().collect();
        assert_eq!(chars[u[1].start..u[1].end].iter().collect::<String>(), u[1].text);
    }

    #[test]
    fn word_boundaries_aliases_and_plurals() {
        let u = units("GFX is not a code. Greetings exchanged. gf: confirms the answer.");
        assert_eq!(
            u,
            [
                ("Greeting".into(), Polarity::Supports),
                ("Guiding Feedback".into(), Polarity::Supports)
            ]
        );
        let u = units("Understanding/Engagement-Tutor: no question asked");
        assert_eq!(
            u,
            [("Understanding/Engagement-Tutor".into(), Polarity::Rejects)]
        );
    }

    #[test]
    fn character_offsets_with_multibyte_text() {
        let s = "Ça va — Greeting: oui";
        let u = extract_reasoning_units(s, &Codebook::tutoring());
        assert_eq!(u[0].start, 8);
        assert_eq!(u[0].text, "Greeting: oui");
    }

    #[test]
    fn per_code_text_concatenates_spans() {
        let cb = Codebook::tutoring();
        let u = extract_reasoning_units("Greeting: hi. Instruction: no. Greeting: again", &cb);
        let t = text_by_code(&u, &cb);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].1, "Greeting: hi. Greeting: again");
    }
}
