//! Model service clients: embeddings, reranking and chat.
//!
//! Every model is reached through one of three traits so the engine stays
//! model-agnostic. [`http`] speaks the OpenAI-style JSON wire protocol;
//! [`mock`] provides deterministic in-process doubles for offline runs.

pub mod http;
mod limiter;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use limiter::InFlightLimiter;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned an error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("backend returned {found} result(s) for {expected} input(s)")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidInput(String),
}

/// API key that never prints its value.
#[derive(Clone, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Fails on an empty or non-finite vector.
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Backend {
                status: None,
                message: "embedding contains non-finite values".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Option<Embedding> {
        let norm = self.norm();
        (norm > 0.0).then(|| Embedding {
            values: self.values.iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_option_scores: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 16,
            want_option_scores: true,
        }
    }
}

/// Why the engine is calling the chat model. Real backends ignore this;
/// scripted mocks use it to pick the reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatPurpose {
    Answer,
    ConsistencySample,
    Rephrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub question_id: String,
    pub purpose: ChatPurpose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub decode: DecodeParams,
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            decode: DecodeParams::default(),
            tag: None,
        }
    }

    pub fn with_decode(mut self, decode: DecodeParams) -> Self {
        self.decode = decode;
        self
    }

    pub fn with_tag(mut self, question_id: impl Into<String>, purpose: ChatPurpose) -> Self {
        self.tag = Some(RequestTag {
            question_id: question_id.into(),
            purpose,
        });
        self
    }

    pub(crate) fn validate(&self) -> Result<(), BackendError> {
        if self.user_prompt.trim().is_empty() {
            return Err(BackendError::InvalidInput("empty user prompt".into()));
        }
        if !(self.decode.temperature >= 0.0 && self.decode.temperature.is_finite()) {
            return Err(BackendError::InvalidInput("temperature must be >= 0".into()));
        }
        if self.decode.max_tokens == 0 {
            return Err(BackendError::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// Per-option log-scores (or probabilities) when the backend exposes them.
    pub option_scores: Option<BTreeMap<char, f64>>,
    pub latency: Duration,
}

pub trait EmbeddingBackend: Send + Sync {
    /// One vector per input text, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, BackendError>;
}

pub trait RerankBackend: Send + Sync {
    /// One relevance score per candidate, in candidate order.
    fn rerank(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, BackendError>;
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub(crate) fn check_embed_input(texts: &[&str]) -> Result<(), BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(BackendError::InvalidInput(format!("text {i} is empty")));
    }
    Ok(())
}

pub(crate) fn check_rerank_input(candidates: &[&str]) -> Result<(), BackendError> {
    if candidates.is_empty() {
        return Err(BackendError::InvalidInput("no candidates to rerank".into()));
    }
    Ok(())
}

/// Checks count and shared dimension of a batch of embeddings.
pub(crate) fn check_embed_output(
    expected_len: usize,
    vectors: &[Embedding],
) -> Result<(), BackendError> {
    if vectors.len() != expected_len {
        return Err(BackendError::LengthMismatch {
            expected: expected_len,
            found: vectors.len(),
        });
    }
    if let Some(first) = vectors.first() {
        let dim = first.dimension();
        if let Some(bad) = vectors.iter().find(|v| v.dimension() != dim) {
            return Err(BackendError::DimensionMismatch {
                expected: dim,
                found: bad.dimension(),
            });
        }
    }
    Ok(())
}
