//! Code definitions shared by the coding agents, the analytics and the human
//! reviewers.
//!
//! A [`Codebook`] is always validated on construction: at least one code, no
//! empty names, no name (or alias) used twice, and reference kappa values in
//! `[0, 1]`. Name lookup is case-insensitive and ignores surrounding
//! whitespace, since model output is not consistent about either.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The eight-code tutoring codebook, with the human inter-coder kappa values
/// reported for the same dataset where they are known.
pub const TUTORING_CODEBOOK_JSON: &str = include_str!("../data/tutoring-codebook.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodebookError {
    #[error("duplicate code name `{0}`")]
    DuplicateCodeName(String),
    #[error("codebook has no codes")]
    EmptyCodebook,
    #[error("malformed codebook document: {0}")]
    MalformedDocument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Code {
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub reference_kappa: Option<f64>,
    /// Abbreviations that resolve to this code (e.g. "GF").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl Code {
    pub fn new(name: impl Into<String>, definition: impl Into<String>) -> Self {
        Code {
            name: name.into(),
            definition: definition.into(),
            examples: Vec::new(),
            reference_kappa: None,
            aliases: Vec::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.reference_kappa = Some(kappa);
        self
    }

    /// The name followed by every alias.
    pub fn spellings(&self) -> impl Iterator<Item = &str> {
        core::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Deserialize)]
struct CodebookDocument {
    #[serde(default)]
    version: String,
    codes: Vec<Code>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookDocument")]
pub struct Codebook {
    version: String,
    codes: Vec<Code>,
}

impl TryFrom<CodebookDocument> for Codebook {
    type Error = CodebookError;

    fn try_from(doc: CodebookDocument) -> Result<Self, Self::Error> {
        Codebook::new(doc.version, doc.codes)
    }
}

impl Codebook {
    pub fn new(version: impl Into<String>, codes: Vec<Code>) -> Result<Self, CodebookError> {
        if codes.is_empty() {
            return Err(CodebookError::EmptyCodebook);
        }
        let mut seen: Vec<&str> = Vec::new();
        for (i, code) in codes.iter().enumerate() {
            if code.name.trim().is_empty() {
                return Err(CodebookError::MalformedDocument(format!(
                    "codes[{i}]: name is empty"
                )));
            }
            if let Some(k) = code.reference_kappa {
                if !(0.0..=1.0).contains(&k) {
                    return Err(CodebookError::MalformedDocument(format!(
                        "codes[{i}] `{}`: reference_kappa {k} outside [0, 1]",
                        code.name
                    )));
                }
            }
            for spelling in code.spellings() {
                if spelling.trim().is_empty() {
                    return Err(CodebookError::MalformedDocument(format!(
                        "codes[{i}] `{}`: empty alias",
                        code.name
                    )));
                }
                if seen.iter().any(|s| eq_fold(s.trim(), spelling.trim())) {
                    return Err(CodebookError::DuplicateCodeName(spelling.trim().to_string()));
                }
                seen.push(spelling);
            }
        }
        Ok(Codebook {
            version: version.into(),
            codes,
        })
    }

    /// The bundled eight-code tutoring codebook.
    pub fn tutoring() -> Self {
        load_codebook(TUTORING_CODEBOOK_JSON).expect("bundled codebook is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(|c| c.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Code> {
        self.resolve(name).map(|i| &self.codes[i])
    }

    /// Index of the code whose name or alias matches `key`, ignoring case and
    /// surrounding whitespace.
    pub fn resolve(&self, key: &str) -> Option<usize> {
        let key = key.trim();
        self.codes
            .iter()
            .position(|c| c.spellings().any(|s| eq_fold(s.trim(), key)))
    }
}

/// Parses a codebook JSON document.
pub fn load_codebook(source: &str) -> Result<Codebook, CodebookError> {
    let doc: CodebookDocument = serde_json::from_str(source)
        .map_err(|e| CodebookError::MalformedDocument(e.to_string()))?;
    Codebook::try_from(doc)
}

/// Case-insensitive comparison that also handles non-ASCII letters.
pub(crate) fn eq_fold(a: &str, b: &str) -> bool {
    if a.is_ascii() && b.is_ascii() {
        return a.eq_ignore_ascii_case(b);
    }
    a.chars()
        .flat_map(char::to_lowercase)
        .eq(b.chars().flat_map(char::to_lowercase))
}
