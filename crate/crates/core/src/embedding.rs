//! Text embeddings and the cosine algebra that drift, resonance and
//! retrieval are built on.
//!
//! The default provider is a hashed bag of tokens: text is lowercased,
//! split on non-alphanumeric characters, every token is hashed with 64-bit
//! FNV-1a into one of `dims` buckets, and the bucket counts are
//! L2-normalized. It is deterministic and needs no model download. The
//! external provider posts `{"texts": [...]}` to an HTTP endpoint and
//! expects `{"vectors": [[...], ...]}` back.

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const DEFAULT_DIMS: usize = 256;
pub const MIN_DIMS: usize = 8;
pub const DEFAULT_TIMEOUT_MS: u64 = 2_000;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("external embedding service unavailable: {0}")]
    ExternalServiceUnavailable(String),
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
}

/// Fixed-dimension real vector with its L2 norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(EmbeddingVector { values, norm })
    }

    pub fn zeros(dims: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dims],
            norm: 0.0,
        }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Zero-norm vectors carry no direction; cosine is undefined for them.
    pub fn is_degenerate(&self) -> bool {
        self.norm == 0.0
    }

    pub fn scaled(&self, k: f64) -> Result<Self, EmbeddingError> {
        EmbeddingVector::new(self.values.iter().map(|v| v * k).collect())
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64, EmbeddingError> {
        check_dims(self, other)?;
        Ok(dot(&self.values, &other.values))
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), EmbeddingError> {
    if a.dims() != b.dims() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, or `None` when either vector has zero norm.
/// The result is clamped into [-1, 1] to absorb rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Option<f64>, EmbeddingError> {
    check_dims(a, b)?;
    if a.is_degenerate() || b.is_degenerate() {
        return Ok(None);
    }
    let c = dot(&a.values, &b.values) / (a.norm * b.norm);
    Ok(Some(c.clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderProvider {
    #[default]
    DeterministicHash,
    ExternalService,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    #[serde(default)]
    pub provider: EmbedderProvider,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_dims() -> usize {
    DEFAULT_DIMS
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            provider: EmbedderProvider::DeterministicHash,
            dims: DEFAULT_DIMS,
            endpoint: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dims < MIN_DIMS {
            return Err(EmbeddingError::InvalidSpec(format!(
                "dims must be >= {MIN_DIMS}, got {}",
                self.dims
            )));
        }
        match (self.provider, &self.endpoint) {
            (EmbedderProvider::ExternalService, None) => Err(EmbeddingError::InvalidSpec(
                "external_service requires an endpoint".into(),
            )),
            (EmbedderProvider::DeterministicHash, Some(_)) => Err(EmbeddingError::InvalidSpec(
                "endpoint is only valid for external_service".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEmbedder>, EmbeddingError> {
        self.validate()?;
        Ok(match self.provider {
            EmbedderProvider::DeterministicHash => Box::new(HashEmbedder::new(self.dims)),
            EmbedderProvider::ExternalService => Box::new(ExternalEmbedder::new(
                self.endpoint.clone().expect("validated"),
                self.dims,
                Duration::from_millis(self.timeout_ms),
            )),
        })
    }
}

pub trait TextEmbedder: Send + Sync {
    fn dims(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dims: usize,
}

impl HashEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims >= MIN_DIMS, "dims must be >= {MIN_DIMS}");
        HashEmbedder { dims }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a_64(token.as_bytes()) % self.dims as u64) as usize
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f64; self.dims];
        for token in tokenize(text) {
            values[self.bucket(&token)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values).expect("bucket counts are finite")
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIMS)
    }
}

impl TextEmbedder for HashEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.embed_text(text))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Delegates to an HTTP embedding service. The agent is shared, so
/// concurrent callers each get their own in-flight request.
pub struct ExternalEmbedder {
    endpoint: String,
    dims: usize,
    agent: ureq::Agent,
}

impl ExternalEmbedder {
    pub fn new(endpoint: String, dims: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        ExternalEmbedder {
            endpoint,
            dims,
            agent,
        }
    }
}

impl TextEmbedder for ExternalEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let unavailable = |e: ureq::Error| EmbeddingError::ExternalServiceUnavailable(e.to_string());
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::ExternalServiceUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dims {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dims,
                        right: v.len(),
                    });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}
