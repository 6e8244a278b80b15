use std::hash::Hasher;
use std::thread;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tokenize::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Component-wise arithmetic mean, accumulated in `f64`.
    pub fn mean(vectors: &[EmbeddingVector]) -> Option<EmbeddingVector> {
        let dim = vectors.first()?.dimension();
        let mut acc = vec![0f64; dim];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += f64::from(*x);
            }
        }
        let n = vectors.len() as f64;
        Some(EmbeddingVector::new(acc.into_iter().map(|a| (a / n) as f32).collect()))
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding provider rejected the request: {0}")]
    Rejected(String),
    #[error("malformed embedding response: {0}")]
    Malformed(String),
}

impl EmbedError {
    fn retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded in the store manifest.
    fn id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Offline embedder: term frequencies of lower-cased tokens hashed into a
/// fixed number of buckets with 64-bit FNV-1a, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder { dimension }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0f64; self.dimension];
        for token in tokenize(text) {
            let mut h = FnvHasher::default();
            h.write(token.to_lowercase().as_bytes());
            counts[(h.finish() % self.dimension as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        EmbeddingVector::new(counts.into_iter().map(|c| c as f32).collect())
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(Self::DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-fnv1a-{}", self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f32>,
}

/// Embeddings endpoint speaking `{"input": [...], "model": ...}`.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

impl RemoteEmbedder {
    pub const API_KEY_VAR: &'static str = "PTCO_EMBED_API_KEY";

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(RemoteEmbedder {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(Self::API_KEY_VAR).ok(),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_retries(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest {
            input: texts,
            model: &self.model,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(EmbedError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbedError::Rejected(format!("HTTP {status}: {body}")));
        }
        let parsed: EmbedResponse = resp.json().map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect())
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request(texts) {
                Err(e) if e.retryable() && attempt < self.max_attempts => {
                    thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                }
                other => return other,
            }
        }
    }
}
