//! Multiple-choice answering: prompt rendering, reply parsing, per-attempt
//! confidence and the LLM-free similarity baseline.

mod baseline;
mod confidence;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::corpus::PageKey;

pub use baseline::{similarity_baseline, SimilaritySpace};
pub use confidence::{attempt_confidence, majority_label, option_probabilities};
pub use parse::{parse_answer, AnswerFallback, ParsedAnswer};
pub use prompt::{build_prompt, rephrase_prompt, PromptBundle, PromptTemplates, PromptVariant};

#[derive(Debug, thiserror::Error)]
pub enum QaError {
    #[error("context references page {0}, which is not in the corpus")]
    MissingPage(PageKey),
    #[error("no retrieved context for a context-based prompt")]
    EmptyContext,
    #[error("cannot map reply to an option: {0:?}")]
    UnparseableAnswer(String),
    #[error("neither option scores nor samples are available")]
    NoConfidenceSignal,
    #[error("prompt template error: {0}")]
    Template(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    ParsedLetter,
    OptionText,
    SimilarityFallback,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAttempt {
    pub label: char,
    pub confidence: f64,
    pub source: AnswerSource,
    pub prompt_variant: PromptVariant,
    pub raw_text: String,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_earliest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Like [`argmax_earliest`], but a later value only wins when it exceeds the
/// current best by more than `tolerance`, so values equal up to rounding
/// noise tie to the earliest.
pub fn argmax_earliest_within(values: &[f64], tolerance: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b] + tolerance) {
            best = Some(i);
        }
    }
    best
}
