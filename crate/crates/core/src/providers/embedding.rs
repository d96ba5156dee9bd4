use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::http::{api_key, classify_status, transport_to_provider, HttpConfig, HttpTransport, UreqTransport};
use super::{EmbeddingProvider, ProviderError, RetryPolicy};

pub const DEFAULT_EMBEDDING_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_text: String,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; `None` when either vector has zero norm or the
/// dimensions differ.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na.sqrt() * nb.sqrt()))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Offline embedder: counts character trigrams of the canonical text padded
/// with one space on each side, buckets each trigram by 64-bit FNV-1a of its
/// UTF-8 bytes modulo the dimension, then L2-normalizes. Canonical text is
/// the input trimmed with internal whitespace runs collapsed to one space.
/// Case is preserved.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    pub fn canonicalize(text: &str) -> String {
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        "hashed-trigram"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let canonical = Self::canonicalize(text);
        if canonical.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        let chars: Vec<char> = format!(" {canonical} ").chars().collect();
        let mut values = vec![0.0; self.dim];
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            values[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(values)
    }
}

/// OpenAI-compatible `/embeddings` backend.
pub struct HttpEmbedder {
    config: HttpConfig,
    dim: usize,
    id: String,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, dim: usize, transport: Arc<dyn HttpTransport>) -> Self {
        HttpEmbedder {
            id: format!("http-embed:{}", config.model),
            api_key: api_key(&config.api_key_env),
            retry: config.retry_policy(),
            config,
            dim,
            transport,
        }
    }

    pub fn with_ureq(config: HttpConfig, dim: usize) -> Self {
        let t = Arc::new(UreqTransport::new(std::time::Duration::from_secs(config.timeout_secs)));
        Self::new(config, dim, t)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let url = self.config.endpoint("embeddings");
        let body = json!({"model": self.config.model, "input": text.trim()});
        let (values, _) = self.retry.run(&std::thread::sleep, |_| {
            let reply = self
                .transport
                .post_json(&url, self.api_key.as_deref(), &body)
                .map_err(transport_to_provider)?;
            if !(200..300).contains(&reply.status) {
                return Err(classify_status(&reply));
            }
            let parsed: EmbeddingBody =
                serde_json::from_str(&reply.body).map_err(|e| ProviderError::Decode(e.to_string()))?;
            parsed
                .data
                .into_iter()
                .next()
                .map(|d| d.embedding)
                .ok_or_else(|| ProviderError::Decode("empty data array".into()))
        })?;
        Ok(values)
    }
}
