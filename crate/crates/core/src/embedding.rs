//! Text embeddings and cosine similarity.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: usize = 512;
pub const HASHED_DIM: usize = 256;

/// Largest floating-point overshoot past ±1 that [`cosine`] clamps silently.
pub const CLAMP_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("text is empty")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("zero vector")]
    ZeroVector,
    #[error("vectors from different providers or dimensions ({0} vs {1})")]
    ProviderMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("no vectors to pool")]
    EmptyList,
    #[error("vectors have different dimensions")]
    RaggedDimensions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn scaled(&self, factor: f64) -> EmbeddingVector {
        EmbeddingVector {
            values: self.values.iter().map(|v| v * factor).collect(),
            provider_id: self.provider_id.clone(),
        }
    }
}

/// An embedding together with what happened to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub vector: EmbeddingVector,
    pub truncated: bool,
    /// Token count before truncation.
    pub tokens: usize,
}

/// Contract for anything that turns text into a fixed-dimension vector.
///
/// Providers are deterministic for a fixed configuration and keep only the
/// first `max_tokens` tokens of their input.
pub trait EmbeddingProvider {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn max_tokens(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedded, EmbedError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for alloc::boxed::Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }
    fn embed(&self, text: &str) -> Result<Embedded, EmbedError> {
        (**self).embed(text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }
    fn embed(&self, text: &str) -> Result<Embedded, EmbedError> {
        (**self).embed(text)
    }
}

/// Offline provider: hashed bag of tokens.
///
/// Tokens are maximal alphanumeric runs, lowercased. Each token is hashed
/// (FNV-1a, 64 bit) into one of `dim` buckets, counts are accumulated and the
/// result is L2-normalized. This is the mean of one-hot token vectors scaled
/// to unit length.
#[derive(Debug, Clone)]
pub struct HashedBagProvider {
    id: String,
    dim: usize,
    max_tokens: usize,
}

impl Default for HashedBagProvider {
    fn default() -> Self {
        HashedBagProvider::new(HASHED_DIM, DEFAULT_MAX_TOKENS)
    }
}

impl HashedBagProvider {
    pub fn new(dim: usize, max_tokens: usize) -> Self {
        assert!(dim > 0 && max_tokens > 0, "dim and max_tokens must be positive");
        HashedBagProvider {
            id: alloc::format!("hashed-bag/fnv1a/{dim}"),
            dim,
            max_tokens,
        }
    }
}

impl EmbeddingProvider for HashedBagProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn embed(&self, text: &str) -> Result<Embedded, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut counts = vec![0.0f64; self.dim];
        let mut tokens = 0usize;
        for token in tokenize(text) {
            if tokens < self.max_tokens {
                let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
                counts[bucket] += 1.0;
            }
            tokens += 1;
        }
        if tokens > 0 {
            let norm = libm::sqrt(counts.iter().map(|c| c * c).sum::<f64>());
            counts.iter_mut().for_each(|c| *c /= norm);
        } else {
            // punctuation only; fall back to a fixed non-zero vector
            counts[0] = 1.0;
        }
        Ok(Embedded {
            vector: EmbeddingVector::new(counts, self.id.clone())?,
            truncated: tokens > self.max_tokens,
            tokens,
        })
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Keeps the first `max_tokens` whitespace-separated words.
pub fn truncate_words(text: &str, max_tokens: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_tokens {
        (text.to_string(), false)
    } else {
        (words[..max_tokens].join(" "), true)
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    cosine_with_overshoot(u, v).map(|(c, _)| c)
}

/// Cosine similarity and the amount (≥ 0) that was clamped off to keep the
/// result in `[-1, 1]`.
pub fn cosine_with_overshoot(
    u: &EmbeddingVector,
    v: &EmbeddingVector,
) -> Result<(f64, f64), SimilarityError> {
    if u.provider_id != v.provider_id || u.dim() != v.dim() {
        return Err(SimilarityError::ProviderMismatch(
            alloc::format!("{}[{}]", u.provider_id, u.dim()),
            alloc::format!("{}[{}]", v.provider_id, v.dim()),
        ));
    }
    let raw = cosine_raw(&u.values, &v.values)?;
    let clamped = raw.clamp(-1.0, 1.0);
    Ok((clamped, (raw - clamped).abs()))
}

/// Unclamped cosine on plain slices of equal length.
pub fn cosine_raw(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok(dot / (libm::sqrt(uu) * libm::sqrt(vv)))
}

/// Component-wise arithmetic mean.
pub fn mean_pool<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, PoolError> {
    let first = vectors.first().ok_or(PoolError::EmptyList)?.as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(PoolError::RaggedDimensions);
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
