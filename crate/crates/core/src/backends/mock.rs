//! Deterministic in-process backends for offline runs and tests.
//!
//! Every mock is a pure function of its inputs, its seed and (for the
//! scripted chat) the per-question call count, so repeated runs produce
//! byte-identical results regardless of thread scheduling.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_embed_input, check_rerank_input, BackendError, ChatBackend, ChatPurpose, ChatRequest,
    ChatResponse, Embedding, EmbeddingBackend, RerankBackend,
};
use crate::corpus::{char_ngrams, word_tokens, NgramRange};

pub const DEFAULT_MOCK_DIMENSION: usize = 64;
pub const DEFAULT_MOCK_SEED: u64 = 42;

/// Stable 64-bit hash of a seed and a sequence of byte strings.
pub(crate) fn stable_hash(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

fn trigram_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for g in char_ngrams(text, NgramRange::new(3, 3).expect("valid"), ' ') {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Bag-of-trigrams random projection: each distinct character 3-gram maps
/// to a seeded pseudo-random direction in `[-1, 1)^dimension`, weighted by
/// its count, and the sum is L2-normalized. Texts without any 3-gram
/// (empty or whitespace) map to the zero vector.
pub fn mock_embed_vector(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    assert!(dimension >= 2, "mock embedding dimension must be >= 2");
    let mut v = vec![0.0; dimension];
    for (gram, count) in trigram_counts(text) {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &[gram.as_bytes()]));
        for x in v.iter_mut() {
            *x += count as f64 * rng.gen_range(-1.0..1.0);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIMENSION, DEFAULT_MOCK_SEED)
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, BackendError> {
        check_embed_input(texts)?;
        if self.dimension < 2 {
            return Err(BackendError::InvalidInput("dimension must be >= 2".into()));
        }
        texts
            .iter()
            .map(|t| Embedding::new(mock_embed_vector(t, self.dimension, self.seed)))
            .collect()
    }
}

/// Fraction of distinct query word tokens that also occur in the candidate.
#[derive(Debug, Clone, Default)]
pub struct OverlapReranker;

pub fn token_overlap(query: &str, candidate: &str) -> f64 {
    let unigrams = NgramRange::new(1, 1).expect("valid");
    let q: std::collections::BTreeSet<String> = word_tokens(query, unigrams).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let c: std::collections::BTreeSet<String> =
        word_tokens(candidate, unigrams).into_iter().collect();
    q.intersection(&c).count() as f64 / q.len() as f64
}

impl RerankBackend for OverlapReranker {
    fn rerank(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, BackendError> {
        check_rerank_input(candidates)?;
        Ok(candidates.iter().map(|c| token_overlap(query, c)).collect())
    }
}

/// Scores candidates by input position (first = highest), so a cascade
/// using it keeps the first-stage order.
#[derive(Debug, Clone, Default)]
pub struct IdentityReranker;

impl RerankBackend for IdentityReranker {
    fn rerank(&self, _query: &str, candidates: &[&str]) -> Result<Vec<f64>, BackendError> {
        check_rerank_input(candidates)?;
        let n = candidates.len() as f64;
        Ok((0..candidates.len()).map(|i| 1.0 - i as f64 / n).collect())
    }
}

/// A backend whose every call fails with a transport error.
#[derive(Debug, Clone, Default)]
pub struct UnreachableBackend;

impl UnreachableBackend {
    fn error() -> BackendError {
        BackendError::Transport {
            attempts: 1,
            message: "backend unreachable".into(),
        }
    }
}

impl EmbeddingBackend for UnreachableBackend {
    fn embed(&self, _texts: &[&str]) -> Result<Vec<Embedding>, BackendError> {
        Err(Self::error())
    }
}

impl RerankBackend for UnreachableBackend {
    fn rerank(&self, _query: &str, _candidates: &[&str]) -> Result<Vec<f64>, BackendError> {
        Err(Self::error())
    }
}

impl ChatBackend for UnreachableBackend {
    fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        Err(Self::error())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_scores: Option<BTreeMap<char, f64>>,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            option_scores: None,
        }
    }

    pub fn scored(text: impl Into<String>, scores: &[(char, f64)]) -> Self {
        Self {
            text: text.into(),
            option_scores: Some(scores.iter().copied().collect()),
        }
    }
}

/// Replies for one question. Answer and self-consistency calls consume
/// `answers` in order; the last reply repeats once the list is exhausted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionScript {
    #[serde(default)]
    pub answers: Vec<ScriptedReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rephrase: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatScript {
    #[serde(default)]
    pub questions: BTreeMap<String, QuestionScript>,
}

impl ChatScript {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn answers(mut self, question_id: &str, replies: Vec<ScriptedReply>) -> Self {
        self.questions
            .entry(question_id.to_string())
            .or_default()
            .answers = replies;
        self
    }

    pub fn rephrase(mut self, question_id: &str, text: &str) -> Self {
        self.questions
            .entry(question_id.to_string())
            .or_default()
            .rephrase = Some(text.to_string());
        self
    }
}

/// Behaviour for requests the script does not cover.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatFallback {
    /// Answer by character-trigram overlap between each option and the rest
    /// of the prompt; rephrase requests echo the prompt.
    #[default]
    Lexical,
    /// Return the user prompt unchanged.
    Echo,
    Fixed(String),
    Fail,
}

#[derive(Debug)]
pub struct MockChat {
    script: ChatScript,
    fallback: ChatFallback,
    seed: u64,
    delay: Duration,
    timeout: Option<Duration>,
    counters: Mutex<HashMap<(String, bool), usize>>,
    sample_counters: Mutex<HashMap<u64, usize>>,
}

impl MockChat {
    pub fn new(script: ChatScript, fallback: ChatFallback, seed: u64) -> Self {
        Self {
            script,
            fallback,
            seed,
            delay: Duration::ZERO,
            timeout: None,
            counters: Mutex::new(HashMap::new()),
            sample_counters: Mutex::new(HashMap::new()),
        }
    }

    pub fn lexical(seed: u64) -> Self {
        Self::new(ChatScript::default(), ChatFallback::Lexical, seed)
    }

    pub fn scripted(script: ChatScript) -> Self {
        Self::new(script, ChatFallback::Lexical, DEFAULT_MOCK_SEED)
    }

    /// Simulated service latency; calls whose delay exceeds `timeout` fail
    /// with [`BackendError::Timeout`] after waiting `timeout`.
    pub fn with_latency(mut self, delay: Duration, timeout: Option<Duration>) -> Self {
        self.delay = delay;
        self.timeout = timeout;
        self
    }

    fn next_index(&self, question_id: &str, rephrase: bool) -> usize {
        let mut counters = self.counters.lock().unwrap_or_else(|e| e.into_inner());
        let n = counters
            .entry((question_id.to_string(), rephrase))
            .or_insert(0);
        let i = *n;
        *n += 1;
        i
    }

    fn scripted_reply(&self, request: &ChatRequest) -> Option<ScriptedReply> {
        let tag = request.tag.as_ref()?;
        let script = self.script.questions.get(&tag.question_id)?;
        match tag.purpose {
            ChatPurpose::Rephrase => script.rephrase.clone().map(ScriptedReply::text),
            ChatPurpose::Answer | ChatPurpose::ConsistencySample => {
                if script.answers.is_empty() {
                    return None;
                }
                let i = self.next_index(&tag.question_id, false);
                Some(script.answers[i.min(script.answers.len() - 1)].clone())
            }
        }
    }

    fn fallback_reply(&self, request: &ChatRequest) -> Result<ScriptedReply, BackendError> {
        let rephrase = matches!(
            request.tag.as_ref().map(|t| t.purpose),
            Some(ChatPurpose::Rephrase)
        );
        match &self.fallback {
            ChatFallback::Fail => Err(UnreachableBackend::error()),
            ChatFallback::Echo => Ok(ScriptedReply::text(request.user_prompt.clone())),
            ChatFallback::Fixed(s) => Ok(ScriptedReply::text(s.clone())),
            ChatFallback::Lexical if rephrase => Ok(ScriptedReply::text(request.user_prompt.clone())),
            ChatFallback::Lexical => Ok(self.lexical_answer(request)),
        }
    }

    fn lexical_answer(&self, request: &ChatRequest) -> ScriptedReply {
        let option_line = Regex::new(r"^\s*([A-Z])[.)]\s+(.*\S)\s*$").expect("valid regex");
        let mut options: Vec<(char, String)> = Vec::new();
        let mut context = String::new();
        for line in request.user_prompt.lines() {
            match option_line.captures(line) {
                Some(c) => options.push((c[1].chars().next().unwrap(), c[2].to_string())),
                None => {
                    context.push_str(line);
                    context.push('\n');
                }
            }
        }
        if options.is_empty() {
            return ScriptedReply::text("Не знаю");
        }
        let context_grams = trigram_counts(&context);
        let logits: Vec<f64> = options
            .iter()
            .map(|(_, text)| {
                let grams = trigram_counts(text);
                if grams.is_empty() {
                    return 0.0;
                }
                let hits = grams.keys().filter(|g| context_grams.contains_key(*g)).count();
                5.0 * hits as f64 / grams.len() as f64
            })
            .collect();
        let pick = if request.decode.temperature > 0.0 {
            let h = stable_hash(self.seed, &[request.user_prompt.as_bytes()]);
            let n = {
                let mut c = self.sample_counters.lock().unwrap_or_else(|e| e.into_inner());
                let n = c.entry(h).or_insert(0);
                *n += 1;
                *n
            };
            let mut rng = ChaCha8Rng::seed_from_u64(h ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            sample_softmax(&logits, request.decode.temperature, rng.gen::<f64>())
        } else {
            argmax_first(&logits)
        };
        let label = options[pick].0;
        ScriptedReply {
            text: format!("Відповідь: {label}"),
            option_scores: Some(options.iter().map(|o| o.0).zip(logits).collect()),
        }
    }
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_softmax(logits: &[f64], temperature: f64, u: f64) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}

impl ChatBackend for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        if let Some(timeout) = self.timeout {
            if self.delay > timeout {
                std::thread::sleep(timeout);
                return Err(BackendError::Timeout(timeout));
            }
        }
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let reply = match self.scripted_reply(request) {
            Some(r) => r,
            None => self.fallback_reply(request)?,
        };
        Ok(ChatResponse {
            text: reply.text,
            option_scores: if request.decode.want_option_scores {
                reply.option_scores
            } else {
                None
            },
            latency: self.delay,
        })
    }
}
