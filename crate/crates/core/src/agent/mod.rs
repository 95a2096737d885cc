//! Confidence-gated answering: a base attempt, then optionally a rephrased
//! query with a second retrieval pass and re-prompts with stricter
//! instructions, all under a shared wall-clock budget.

mod budget;
mod pipeline;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatPurpose, ChatRequest, DecodeParams, EmbeddingBackend};
use crate::corpus::{Corpus, Question};
use crate::dense::{Cascade, RetrievalError};
use crate::eval::Prediction;
use crate::qa::{
    argmax_earliest_within, attempt_confidence, build_prompt, majority_label, parse_answer, rephrase_prompt,
    similarity_baseline, AnswerAttempt, AnswerFallback, PromptTemplates, PromptVariant, QaError,
    SimilaritySpace,
};
use crate::retrieval::RetrievalResult;
use crate::sparse::TfidfIndex;

pub use budget::{BudgetGovernor, Clock, ManualClock, MonotonicClock};
pub use pipeline::{run_pipeline, write_traces};

/// Attempt confidences closer than this count as tied. Softmax sums in a
/// label-dependent order, so equal probabilities can differ in the last bits.
pub const CONFIDENCE_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Option/page similarity only, no chat model.
    Baseline,
    /// Chat model without retrieved context; retrieval still picks the page.
    LlmOnly,
    /// Cascade plus a single answer attempt.
    Rag,
    /// Cascade plus the confidence-gated controller.
    Agentic,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "llm_only" | "llm-only" => Ok(Mode::LlmOnly),
            "rag" => Ok(Mode::Rag),
            "agentic" => Ok(Mode::Agentic),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Which retrieval pass supplies the predicted page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageAttribution {
    /// Always the pass over the original question.
    Base,
    /// The pass that produced the selected attempt.
    #[default]
    Selected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub enable_rephrase: bool,
    pub enable_retry: bool,
    pub confidence_threshold: f64,
    pub max_answer_attempts: usize,
    #[serde(rename = "total_budget_secs", with = "budget::secs")]
    pub total_budget: Duration,
    #[serde(rename = "per_question_reserve_secs", with = "budget::secs")]
    pub per_question_reserve: Duration,
    pub page_attribution: PageAttribution,
    /// Decoding temperature of retry re-prompts.
    pub retry_temperature: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            enable_rephrase: true,
            enable_retry: true,
            confidence_threshold: 0.5,
            max_answer_attempts: 3,
            total_budget: Duration::from_secs(9 * 3600),
            per_question_reserve: Duration::from_secs(5),
            page_attribution: PageAttribution::Selected,
            retry_temperature: 0.7,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let err = |m: &str| Err(AgentError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return err("confidence_threshold must be in [0, 1]");
        }
        if self.max_answer_attempts == 0 {
            return err("max_answer_attempts must be >= 1");
        }
        if self.per_question_reserve > self.total_budget {
            return err("per_question_reserve must not exceed total_budget");
        }
        if !(self.retry_temperature >= 0.0 && self.retry_temperature.is_finite()) {
            return err("retry_temperature must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// Option scores when the backend returns them, else self-consistency.
    #[default]
    Auto,
    SelfConsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSpace {
    #[default]
    Tfidf,
    Embeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    /// Built-in template set name, or a file stem inside `templates_dir`.
    pub template: String,
    pub page_char_budget: usize,
    pub max_tokens: u32,
    /// Map unparseable replies to the closest option by embedding.
    pub similarity_fallback: bool,
    pub confidence: ConfidenceSource,
    pub consistency_samples: usize,
    pub consistency_temperature: f64,
    pub baseline_space: BaselineSpace,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            template: "uk".into(),
            page_char_budget: 2000,
            max_tokens: 16,
            similarity_fallback: true,
            confidence: ConfidenceSource::Auto,
            consistency_samples: 3,
            consistency_temperature: 0.7,
            baseline_space: BaselineSpace::Tfidf,
        }
    }
}

/// Everything needed to answer one question. `fallback_index` is a
/// character TF-IDF index used by the baseline and by backend-failure
/// fallbacks, so it must not depend on any remote service.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub mode: Mode,
    pub corpus: &'a Corpus,
    pub cascade: Cascade<'a>,
    pub chat: &'a dyn ChatBackend,
    pub embedder: Option<&'a dyn EmbeddingBackend>,
    pub fallback_index: &'a TfidfIndex,
    pub templates: &'a PromptTemplates,
    pub qa: &'a QaConfig,
    pub agent: &'a AgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedAttempt {
    #[serde(flatten)]
    pub attempt: AnswerAttempt,
    /// Index into `QuestionTrace::retrievals`.
    pub retrieval_pass: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub prompt_variant: PromptVariant,
    pub retrieval_pass: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPass {
    pub query: String,
    pub result: RetrievalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub attempts: Vec<TracedAttempt>,
    pub failed_attempts: Vec<FailedAttempt>,
    pub retrievals: Vec<RetrievalPass>,
    /// Index into `attempts`.
    pub selected: usize,
    #[serde(rename = "final")]
    pub prediction: Prediction,
    pub budget_exhausted: bool,
    /// Answer and rephrase calls; self-consistency samples are counted apart.
    pub chat_calls: usize,
    pub sample_calls: usize,
    /// Set when the question fell back to the similarity baseline.
    pub fallback_reason: Option<String>,
    pub elapsed_ms: u64,
}

/// Reformulates the question with the rephrase template. Any failure, or an
/// empty reply, yields the original text.
pub fn rephrase_query(question: &Question, chat: &dyn ChatBackend, templates: &PromptTemplates) -> String {
    let (system, user) = rephrase_prompt(question, templates);
    let request = ChatRequest::new(system, user)
        .with_decode(DecodeParams {
            temperature: 0.0,
            max_tokens: 256,
            want_option_scores: false,
        })
        .with_tag(question.question_id.clone(), ChatPurpose::Rephrase);
    match chat.chat(&request) {
        Ok(r) if !r.text.trim().is_empty() => r.text.trim().to_string(),
        Ok(_) => question.text.clone(),
        Err(e) => {
            tracing::debug!(question = %question.question_id, error = %e, "rephrase failed, keeping the original question");
            question.text.clone()
        }
    }
}

struct Attempted {
    attempt: AnswerAttempt,
    samples: usize,
}

impl Engine<'_> {
    fn answer_fallback(&self) -> AnswerFallback<'_> {
        match self.embedder {
            Some(e) if self.qa.similarity_fallback => AnswerFallback::Embeddings(e),
            _ => AnswerFallback::Disabled,
        }
    }

    fn decode(&self, temperature: f64) -> DecodeParams {
        DecodeParams {
            temperature,
            max_tokens: self.qa.max_tokens,
            want_option_scores: true,
        }
    }

    fn attempt(
        &self,
        question: &Question,
        context: &RetrievalResult,
        variant: PromptVariant,
        temperature: f64,
    ) -> Result<Attempted, QaError> {
        let bundle = build_prompt(
            question,
            context,
            self.corpus,
            self.cascade.config.context_pages,
            variant,
            self.templates,
            self.qa.page_char_budget,
        )?;
        let request = ChatRequest::new(bundle.system_prompt, bundle.user_prompt)
            .with_decode(self.decode(temperature))
            .with_tag(question.question_id.clone(), ChatPurpose::Answer);
        let response = self.chat.chat(&request)?;
        let parsed = parse_answer(&response.text, question, self.answer_fallback())?;
        let scores = response
            .option_scores
            .as_ref()
            .filter(|_| self.qa.confidence == ConfidenceSource::Auto)
            .filter(|s| s.values().any(|v| v.is_finite()));
        let mut attempt = AnswerAttempt {
            label: parsed.label,
            confidence: 0.0,
            source: parsed.source,
            prompt_variant: variant,
            raw_text: response.text,
        };
        if let Some(scores) = scores {
            attempt.confidence = attempt_confidence(Some(scores), parsed.label, &[])?;
            return Ok(Attempted { attempt, samples: 0 });
        }
        if self.qa.consistency_samples == 0 {
            return Err(QaError::NoConfidenceSignal);
        }
        let mut labels = vec![parsed.label];
        let sample_request = ChatRequest {
            decode: self.decode(self.qa.consistency_temperature),
            tag: Some(crate::backends::RequestTag {
                question_id: question.question_id.clone(),
                purpose: ChatPurpose::ConsistencySample,
            }),
            ..request
        };
        for _ in 0..self.qa.consistency_samples {
            match self
                .chat
                .chat(&sample_request)
                .map_err(QaError::from)
                .and_then(|r| parse_answer(&r.text, question, self.answer_fallback()))
            {
                Ok(p) => labels.push(p.label),
                Err(e) => tracing::debug!(question = %question.question_id, error = %e, "consistency sample dropped"),
            }
        }
        let (majority, _) = majority_label(&labels).expect("at least the first label");
        attempt.label = majority;
        attempt.confidence = attempt_confidence(None, majority, &labels)?;
        Ok(Attempted {
            attempt,
            samples: self.qa.consistency_samples,
        })
    }

    fn baseline_attempt(&self, question: &Question, context: &RetrievalResult) -> Result<AnswerAttempt, QaError> {
        let space = match (self.qa.baseline_space, self.embedder) {
            (BaselineSpace::Embeddings, Some(e)) => SimilaritySpace::Embeddings(e),
            _ => SimilaritySpace::Tfidf(self.fallback_index),
        };
        similarity_baseline(question, context, self.corpus, space)
    }
}

/// Runs the answer loop for one question. Errors surface only when no
/// attempt succeeded (or the base retrieval failed).
pub fn answer_question(
    question: &Question,
    engine: &Engine<'_>,
    governor: &BudgetGovernor<'_>,
) -> Result<QuestionTrace, AgentError> {
    let started = Instant::now();
    let cfg = engine.agent;
    let base = engine.cascade.retrieve(&question.text)?;
    let mut trace = QuestionTrace {
        question_id: question.question_id.clone(),
        attempts: Vec::new(),
        failed_attempts: Vec::new(),
        retrievals: vec![RetrievalPass {
            query: question.text.clone(),
            result: base,
        }],
        selected: 0,
        prediction: Prediction {
            question_id: question.question_id.clone(),
            answer: question.first_label(),
            doc_id: String::new(),
            page: 0,
        },
        budget_exhausted: false,
        chat_calls: 0,
        sample_calls: 0,
        fallback_reason: None,
        elapsed_ms: 0,
    };

    let mut last_error: Option<QaError> = None;
    let mut attempts_made = 0usize;
    let mut run = |trace: &mut QuestionTrace, pass: usize, variant: PromptVariant, temperature: f64| {
        attempts_made += 1;
        trace.chat_calls += 1;
        match engine.attempt(question, &trace.retrievals[pass].result, variant, temperature) {
            Ok(a) => {
                trace.sample_calls += a.samples;
                trace.attempts.push(TracedAttempt {
                    attempt: a.attempt,
                    retrieval_pass: pass,
                });
            }
            Err(e) => {
                tracing::debug!(question = %question.question_id, error = %e, ?variant, "answer attempt failed");
                trace.failed_attempts.push(FailedAttempt {
                    prompt_variant: variant,
                    retrieval_pass: pass,
                    error: e.to_string(),
                });
                last_error = Some(e);
            }
        }
        attempts_made
    };
    let best = |trace: &QuestionTrace| {
        let conf: Vec<f64> = trace.attempts.iter().map(|a| a.attempt.confidence).collect();
        argmax_earliest_within(&conf, CONFIDENCE_TIE_TOLERANCE)
    };
    let below = |trace: &QuestionTrace| {
        best(trace).is_none_or(|i| trace.attempts[i].attempt.confidence < cfg.confidence_threshold)
    };

    match engine.mode {
        Mode::Baseline => {
            let a = engine.baseline_attempt(question, &trace.retrievals[0].result)?;
            trace.attempts.push(TracedAttempt {
                attempt: a,
                retrieval_pass: 0,
            });
        }
        Mode::LlmOnly => {
            run(&mut trace, 0, PromptVariant::LlmOnly, 0.0);
        }
        Mode::Rag | Mode::Agentic => {
            let mut made = run(&mut trace, 0, PromptVariant::Base, 0.0);
            trace.budget_exhausted = !governor.allows_optional();
            if engine.mode == Mode::Agentic {
                if cfg.enable_rephrase && below(&trace) && made < cfg.max_answer_attempts {
                    if governor.allows_optional() {
                        let rephrased = rephrase_query(question, engine.chat, engine.templates);
                        trace.chat_calls += 1;
                        match engine.cascade.retrieve(&rephrased) {
                            Ok(result) => {
                                trace.retrievals.push(RetrievalPass { query: rephrased, result });
                                let pass = trace.retrievals.len() - 1;
                                made = run(&mut trace, pass, PromptVariant::RephrasedQuery, 0.0);
                            }
                            Err(e) => {
                                tracing::warn!(question = %question.question_id, error = %e, "second retrieval pass failed");
                            }
                        }
                    } else {
                        trace.budget_exhausted = true;
                    }
                }
                if cfg.enable_retry {
                    while below(&trace) && made < cfg.max_answer_attempts {
                        if !governor.allows_optional() {
                            trace.budget_exhausted = true;
                            break;
                        }
                        let pass = best(&trace).map_or(0, |i| trace.attempts[i].retrieval_pass);
                        made = run(&mut trace, pass, PromptVariant::RetryInstructions, cfg.retry_temperature);
                    }
                }
            }
        }
    }

    let selected = match best(&trace) {
        Some(i) => i,
        None => return Err(last_error.unwrap_or(QaError::NoConfidenceSignal).into()),
    };
    let chosen = &trace.attempts[selected];
    let pass = match cfg.page_attribution {
        PageAttribution::Selected => chosen.retrieval_pass,
        PageAttribution::Base => 0,
    };
    let top = trace.retrievals[pass]
        .result
        .top()
        .ok_or(QaError::EmptyContext)?
        .key
        .clone();
    trace.selected = selected;
    trace.prediction = Prediction {
        question_id: question.question_id.clone(),
        answer: chosen.attempt.label,
        doc_id: top.doc_id,
        page: top.page_number,
    };
    trace.elapsed_ms = started.elapsed().as_millis() as u64;
    Ok(trace)
}

/// Similarity-baseline trace for a question whose normal path failed. Uses
/// the cascade when it still works, else the local character index.
pub fn fallback_trace(question: &Question, engine: &Engine<'_>, reason: String) -> QuestionTrace {
    let started = Instant::now();
    let result = engine
        .cascade
        .retrieve(&question.text)
        .ok()
        .filter(|r| !r.is_empty())
        .unwrap_or_else(|| {
            engine
                .fallback_index
                .query(&question.text, engine.cascade.config.first_stage_k.max(1))
        });
    let attempt = similarity_baseline(question, &result, engine.corpus, SimilaritySpace::Tfidf(engine.fallback_index))
        .expect("the local index always ranks at least one corpus page");
    let top = result.top().expect("nonempty").key.clone();
    QuestionTrace {
        question_id: question.question_id.clone(),
        prediction: Prediction {
            question_id: question.question_id.clone(),
            answer: attempt.label,
            doc_id: top.doc_id,
            page: top.page_number,
        },
        attempts: vec![TracedAttempt {
            attempt,
            retrieval_pass: 0,
        }],
        failed_attempts: Vec::new(),
        retrievals: vec![RetrievalPass {
            query: question.text.clone(),
            result,
        }],
        selected: 0,
        budget_exhausted: false,
        chat_calls: 0,
        sample_calls: 0,
        fallback_reason: Some(reason),
        elapsed_ms: started.elapsed().as_millis() as u64,
    }
}
