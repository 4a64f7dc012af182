//! Embedding providers that need IO, and the binary vector store.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::sync::Mutex;
use std::time::Duration;

use rtrc_core::embedding::{truncate_words, EmbedError, Embedded, EmbeddingProvider, EmbeddingVector, HashedBagProvider};
use rtrc_core::TurnId;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{EmbeddingConfig, EmbeddingKind};

pub const STORE_MAGIC: &[u8; 4] = b"RTRC";
pub const STORE_VERSION: u32 = 1;

/// Embeddings from an HTTP service speaking
/// `{"input": [..], "model": ..}` → `{"data": [{"embedding": [..]}]}`.
///
/// Inputs are head-truncated to `max_tokens` whitespace tokens before sending.
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    max_tokens: usize,
    id: String,
}

impl RemoteProvider {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, dim: usize, max_tokens: usize) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        Ok(RemoteProvider {
            client,
            endpoint: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            dim,
            max_tokens,
            id: format!("remote/{model}/{dim}"),
        })
    }
}

impl EmbeddingProvider for RemoteProvider {
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
        #[derive(Deserialize)]
        struct Resp {
            data: Vec<Item>,
        }
        #[derive(Deserialize)]
        struct Item {
            embedding: Vec<f64>,
        }
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = text.split_whitespace().count();
        let (input, truncated) = truncate_words(text, self.max_tokens);
        let mut req = self.client.post(&self.endpoint).json(&json!({"input": [input], "model": self.model}));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::ProviderUnavailable(format!("status {}", resp.status())));
        }
        let body: Resp = resp.json().map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        let values = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::ProviderUnavailable("empty data array".into()))?
            .embedding;
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        Ok(Embedded {
            vector: EmbeddingVector::new(values, self.id.clone())?,
            truncated,
            tokens,
        })
    }
}

/// Memoizes another provider, keyed by provider id and text hash.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<HashMap<(String, [u8; 32]), Embedded>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn max_tokens(&self) -> usize {
        self.inner.max_tokens()
    }

    fn embed(&self, text: &str) -> Result<Embedded, EmbedError> {
        let key = (self.inner.provider_id().to_string(), Sha256::digest(text.as_bytes()).into());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        // computed outside the lock so slow providers don't serialize callers
        let e = self.inner.embed(text)?;
        self.cache.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }
}

pub type BoxedProvider = Box<dyn EmbeddingProvider + Send + Sync>;

pub fn provider_from_config(cfg: &EmbeddingConfig) -> Result<CachedProvider<BoxedProvider>, EmbedError> {
    let inner: BoxedProvider = match cfg.kind {
        EmbeddingKind::Hashed => Box::new(HashedBagProvider::new(cfg.dim, cfg.max_tokens)),
        EmbeddingKind::Remote => {
            let key = cfg.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
            Box::new(RemoteProvider::new(
                cfg.base_url.as_deref().ok_or_else(|| EmbedError::ProviderUnavailable("no base_url".into()))?,
                cfg.model.as_deref().unwrap_or("default"),
                key,
                cfg.dim,
                cfg.max_tokens,
            )?)
        }
    };
    Ok(CachedProvider::new(inner))
}

/// Writes `(turn_id, vector)` records in the little-endian store format.
pub fn write_embeddings<W: Write>(mut w: W, dim: usize, records: &[(TurnId, Vec<f32>)]) -> io::Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&STORE_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(dim).map_err(io::Error::other)?.to_le_bytes())?;
    for (id, v) in records {
        if v.len() != dim {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "vector length differs from store dim"));
        }
        w.write_all(&id.0.to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Stored vectors keyed by turn.
pub type EmbeddingRecords = Vec<(TurnId, Vec<f32>)>;

pub fn read_embeddings<R: Read>(mut r: R) -> io::Result<(usize, EmbeddingRecords)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if &header[..4] != STORE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != STORE_VERSION {
        return Err(bad("unsupported store version"));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let rec = 8 + 4 * dim;
    if body.len() % rec != 0 {
        return Err(bad("truncated record"));
    }
    let records = body
        .chunks_exact(rec)
        .map(|c| {
            let id = TurnId(u64::from_le_bytes(c[..8].try_into().expect("8 bytes")));
            let v = c[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            (id, v)
        })
        .collect();
    Ok((dim, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(HashedBagProvider, AtomicUsize);

    impl EmbeddingProvider for Counting {
        fn provider_id(&self) -> &str {
            self.0.provider_id()
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn max_tokens(&self) -> usize {
            self.0.max_tokens()
        }
        fn embed(&self, text: &str) -> Result<Embedded, EmbedError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.embed(text)
        }
    }

    #[test]
    fn cache_hits_skip_provider() {
        let p = CachedProvider::new(Counting(HashedBagProvider::default(), AtomicUsize::new(0)));
        let a = p.embed("same text").unwrap();
        let b = p.embed("same text").unwrap();
        p.embed("other").unwrap();
        assert_eq!(a, b);
        assert_eq!(p.inner.1.load(Ordering::SeqCst), 2);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn store_round_trip() {
        let recs = vec![(TurnId(3), vec![0.5f32, -1.0, 2.0]), (TurnId(9), vec![0.0, 1e-8, f32::MAX])];
        let mut buf = Vec::new();
        write_embeddings(&mut buf, 3, &recs).unwrap();
        assert_eq!(&buf[..4], b"RTRC");
        assert_eq!(buf.len(), 12 + 2 * (8 + 12));
        let (dim, back) = read_embeddings(&buf[..]).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, recs);
        assert!(read_embeddings(&buf[..buf.len() - 1]).is_err());
        assert!(write_embeddings(Vec::new(), 2, &recs).is_err());
    }
}
