//! Blocking HTTP clients for OpenAI-compatible inference servers.
//!
//! | service   | request                                            | response                                    |
//! |-----------|----------------------------------------------------|---------------------------------------------|
//! | embedding | `POST /v1/embeddings {model, input}`               | `{data: [{embedding, index?}]}`             |
//! | rerank    | `POST /v1/rerank {model, query, documents}`        | `{results: [{index, relevance_score}]}`     |
//! | chat      | `POST /v1/chat/completions {model, messages, ...}` | `{choices: [{message: {content}, logprobs?}]}` |
//!
//! Connection failures, timeouts, HTTP 429 and HTTP 5xx are retried with
//! exponential backoff up to `max_retries` times; other statuses fail
//! immediately.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    check_embed_input, check_embed_output, check_rerank_input, ApiKey, BackendError, ChatBackend,
    ChatRequest, ChatResponse, Embedding, EmbeddingBackend, InFlightLimiter, RerankBackend,
};

const MAX_BACKOFF: Duration = Duration::from_secs(5);
const TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model_name: model_name.into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            initial_backoff: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug)]
struct Transport {
    client: Client,
    config: HttpBackendConfig,
    limiter: InFlightLimiter,
}

enum Failure {
    Retryable { timed_out: bool, message: String },
    Fatal(BackendError),
}

impl Transport {
    fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.timeout.is_zero() {
            return Err(BackendError::InvalidInput("timeout must be positive".into()));
        }
        reqwest::Url::parse(&config.base_url).map_err(|e| {
            BackendError::InvalidInput(format!("invalid base url {:?}: {e}", config.base_url))
        })?;
        let client = Client::builder()
            .timeout(config.timeout)
            .connect_timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidInput(format!("cannot build HTTP client: {e}")))?;
        let limiter = InFlightLimiter::new(config.max_in_flight);
        Ok(Self {
            client,
            config,
            limiter,
        })
    }

    /// `path` starts with `/v1/`; a base URL that already ends in `/v1` is
    /// accepted too, as OpenAI-style clients usually configure it that way.
    fn url(&self, path: &str) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match base.strip_suffix("/v1") {
            Some(root) => format!("{root}{path}"),
            None => format!("{base}{path}"),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.send_once(&url, body)
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable { timed_out, message }) => {
                    if attempt > self.config.max_retries {
                        return Err(if timed_out {
                            BackendError::Timeout(self.config.timeout)
                        } else {
                            BackendError::Transport {
                                attempts: attempt,
                                message,
                            }
                        });
                    }
                    warn!(%url, attempt, %message, "retrying backend request");
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(MAX_BACKOFF);
                }
            }
        }
    }

    fn send_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = req.send().map_err(|e| Failure::Retryable {
            timed_out: e.is_timeout(),
            message: e.without_url().to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retryable {
            timed_out: e.is_timeout(),
            message: e.without_url().to_string(),
        })?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable {
                timed_out: false,
                message: format!("HTTP {}: {}", status.as_u16(), truncate(&text, 200)),
            });
        }
        if !status.is_success() {
            return Err(Failure::Fatal(BackendError::Backend {
                status: Some(status.as_u16()),
                message: truncate(&text, 200),
            }));
        }
        serde_json::from_str(&text).map_err(|e| {
            Failure::Fatal(BackendError::Backend {
                status: Some(status.as_u16()),
                message: format!("invalid JSON body: {e}"),
            })
        })
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    s.chars().take(max_chars).collect()
}

fn malformed(what: &str) -> BackendError {
    BackendError::Backend {
        status: None,
        message: format!("malformed response: {what}"),
    }
}

#[derive(Debug)]
pub struct HttpEmbedder {
    transport: Transport,
}

impl HttpEmbedder {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(config)?,
        })
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, BackendError> {
        check_embed_input(texts)?;
        let body = json!({ "model": self.transport.config.model_name, "input": texts });
        let resp = self.transport.post("/v1/embeddings", &body)?;
        let vectors = parse_embeddings(&resp, texts.len())?;
        check_embed_output(texts.len(), &vectors)?;
        Ok(vectors)
    }
}

pub(crate) fn parse_embeddings(resp: &Value, expected: usize) -> Result<Vec<Embedding>, BackendError> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing data array"))?;
    let mut slots: Vec<Option<Embedding>> = vec![None; data.len().max(expected)];
    for (pos, item) in data.iter().enumerate() {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing embedding"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed("non-numeric embedding value")))
            .collect::<Result<Vec<_>, _>>()?;
        let slot = slots.get_mut(idx).ok_or(BackendError::LengthMismatch {
            expected,
            found: data.len(),
        })?;
        *slot = Some(Embedding::new(values)?);
    }
    let vectors: Vec<Embedding> = slots.into_iter().flatten().collect();
    if vectors.len() != expected || data.len() != expected {
        return Err(BackendError::LengthMismatch {
            expected,
            found: data.len(),
        });
    }
    Ok(vectors)
}

#[derive(Debug)]
pub struct HttpReranker {
    transport: Transport,
}

impl HttpReranker {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(config)?,
        })
    }
}

impl RerankBackend for HttpReranker {
    fn rerank(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, BackendError> {
        check_rerank_input(candidates)?;
        let body = json!({
            "model": self.transport.config.model_name,
            "query": query,
            "documents": candidates,
            "top_n": candidates.len(),
            "return_documents": false,
        });
        let resp = self.transport.post("/v1/rerank", &body)?;
        parse_rerank(&resp, candidates.len())
    }
}

/// Accepts `{results: [...]}` or a bare array, with `relevance_score` or
/// `score` per item.
pub(crate) fn parse_rerank(resp: &Value, expected: usize) -> Result<Vec<f64>, BackendError> {
    let results = resp
        .get("results")
        .or(Some(resp))
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing results array"))?;
    let mismatch = BackendError::LengthMismatch {
        expected,
        found: results.len(),
    };
    if results.len() != expected {
        return Err(mismatch);
    }
    let mut scores = vec![None; expected];
    for item in results {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("missing index"))? as usize;
        let score = item
            .get("relevance_score")
            .or_else(|| item.get("score"))
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| malformed("missing or non-finite score"))?;
        match scores.get_mut(idx) {
            Some(slot @ None) => *slot = Some(score),
            _ => return Err(mismatch),
        }
    }
    scores
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or(mismatch)
}

#[derive(Debug)]
pub struct HttpChat {
    transport: Transport,
}

impl HttpChat {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(config)?,
        })
    }
}

impl ChatBackend for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let mut body = json!({
            "model": self.transport.config.model_name,
            "messages": messages,
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
        });
        if request.decode.want_option_scores {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        let started = Instant::now();
        let resp = self.transport.post("/v1/chat/completions", &body)?;
        let mut out = parse_chat(&resp)?;
        out.latency = started.elapsed();
        debug!(latency_ms = out.latency.as_millis() as u64, "chat completion");
        Ok(out)
    }
}

pub(crate) fn parse_chat(resp: &Value) -> Result<ChatResponse, BackendError> {
    let choice = resp
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| malformed("missing choices"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing message content"))?
        .to_string();
    let option_scores = choice
        .pointer("/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .and_then(|top| option_scores_from_logprobs(top));
    Ok(ChatResponse {
        text,
        option_scores,
        latency: Duration::ZERO,
    })
}

/// Maps first-token alternatives such as `"B"`, `" B"` or `"(B"` to the
/// best log-probability per option letter.
fn option_scores_from_logprobs(top: &[Value]) -> Option<BTreeMap<char, f64>> {
    let mut scores: BTreeMap<char, f64> = BTreeMap::new();
    for alt in top {
        let (Some(token), Some(lp)) = (
            alt.get("token").and_then(Value::as_str),
            alt.get("logprob").and_then(Value::as_f64),
        ) else {
            continue;
        };
        let trimmed = token.trim().trim_matches(|c: char| !c.is_alphanumeric());
        let mut chars = trimmed.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            continue;
        };
        if c.is_ascii_uppercase() && lp.is_finite() {
            let e = scores.entry(c).or_insert(f64::NEG_INFINITY);
            *e = e.max(lp);
        }
    }
    (!scores.is_empty()).then_some(scores)
}
