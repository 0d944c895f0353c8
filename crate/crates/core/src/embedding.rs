//! Question embeddings and the similarity measure used for retrieval.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const DEFAULT_DIM: usize = 256;
pub const MIN_DIM: usize = 8;
pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Offset basis of the second (sign) hash.
const SIGN_OFFSET: u64 = FNV_OFFSET ^ 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding backend unreachable: {0}")]
    Transport(String),
    #[error("embedding backend returned dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding backend response violated the contract: {0}")]
    Contract(String),
    #[error("invalid embedder configuration: {0}")]
    Config(String),
    #[error("batch element {index}: {source}")]
    Batch { index: usize, source: Box<EmbedError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("dimension mismatch: {left} vs {right}")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// A fixed-dimension vector with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Contract("empty embedding".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::Contract(alloc::format!(
                "non-finite component at position {pos}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| f64::from(*v) * f64::from(*v)).sum())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Cosine similarity in `[-1, 1]`. An all-zero operand yields `0.0`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DimensionMismatch> {
    if a.dim() != b.dim() {
        return Err(DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // na * nb is symmetric, so the result is too.
    Ok((dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderBackend {
    #[default]
    Reference,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub backend: EmbedderBackend,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: EmbedderBackend::Reference,
            dim: DEFAULT_DIM,
            endpoint: None,
            model_name: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < MIN_DIM {
            return Err(EmbedError::Config(alloc::format!(
                "dim must be at least {MIN_DIM}, got {}",
                self.dim
            )));
        }
        if self.backend == EmbedderBackend::External
            && (self.endpoint.is_none() || self.model_name.is_none())
        {
            return Err(EmbedError::Config(
                "external backend requires endpoint and model_name".into(),
            ));
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// `result[i] == embed_text(texts[i])`; the first failure is returned
    /// with its position.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed_text(t)
                    .map_err(|e| EmbedError::Batch { index, source: Box::new(e) })
            })
            .collect()
    }
}

/// Deterministic signed feature-hashing embedder.
///
/// Text is lowercased and split on non-alphanumeric characters. Each token
/// adds `±1` to bucket `fnv1a(token) % dim`, the sign being the parity of a
/// second FNV-1a hash with a different offset basis. The accumulated vector
/// is L2-normalized; text without tokens maps to the zero vector.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        EmbedderConfig { dim, ..EmbedderConfig::default() }.validate()?;
        Ok(Self { dim })
    }
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

fn fnv1a(basis: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(basis, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

impl Embedder for ReferenceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let lowered = text.to_lowercase();
        let mut acc = vec![0.0f64; self.dim];
        for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let bucket = (fnv1a(FNV_OFFSET, token.as_bytes()) % self.dim as u64) as usize;
            let sign = if fnv1a(SIGN_OFFSET, token.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = libm::sqrt(acc.iter().map(|v| v * v).sum());
        if norm == 0.0 {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        Ok(EmbeddingVector { values: acc.into_iter().map(|v| (v / norm) as f32).collect() })
    }
}
