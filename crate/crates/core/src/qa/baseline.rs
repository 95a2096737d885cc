use super::{AnswerAttempt, AnswerSource, PromptVariant, QaError};
use crate::backends::EmbeddingBackend;
use crate::corpus::{Corpus, Question};
use crate::retrieval::RetrievalResult;
use crate::sparse::TfidfIndex;

/// Vector space used to compare option texts with the top page.
#[derive(Clone, Copy)]
pub enum SimilaritySpace<'a> {
    /// The index's character space (word space for word-only indices).
    Tfidf(&'a TfidfIndex),
    Embeddings(&'a dyn EmbeddingBackend),
}

impl SimilaritySpace<'_> {
    fn scores(&self, page_text: &str, options: &[&str]) -> Result<Vec<f64>, QaError> {
        match *self {
            SimilaritySpace::Tfidf(index) => {
                let space = index
                    .chars
                    .as_ref()
                    .or(index.word.as_ref())
                    .expect("an index always has at least one term space");
                let page = space.vectorize(page_text);
                Ok(options
                    .iter()
                    .map(|o| space.vectorize(o).dot(&page).clamp(0.0, 1.0))
                    .collect())
            }
            SimilaritySpace::Embeddings(embedder) => {
                let n = options.len();
                if page_text.trim().is_empty() {
                    return Ok(vec![0.0; n]);
                }
                let mut scores = vec![0.0; n];
                let live: Vec<usize> = (0..n).filter(|&i| !options[i].trim().is_empty()).collect();
                if live.is_empty() {
                    return Ok(scores);
                }
                let mut texts = vec![page_text];
                texts.extend(live.iter().map(|&i| options[i]));
                let vectors = embedder.embed(&texts)?;
                for (slot, v) in live.iter().zip(&vectors[1..]) {
                    scores[*slot] = vectors[0].cosine(v).max(0.0);
                }
                Ok(scores)
            }
        }
    }
}

/// Answers without an LLM: the option most similar to the top retrieved
/// page wins, ties to the earliest label. Confidence is the winning score
/// divided by the score total (uniform when every score is zero).
pub fn similarity_baseline(
    question: &Question,
    context: &RetrievalResult,
    corpus: &Corpus,
    space: SimilaritySpace<'_>,
) -> Result<AnswerAttempt, QaError> {
    let top = context.top().ok_or(QaError::EmptyContext)?;
    let page = corpus
        .get(&top.key)
        .ok_or_else(|| QaError::MissingPage(top.key.clone()))?;
    let options: Vec<&str> = question.options.iter().map(|o| o.text.as_str()).collect();
    let scores = space.scores(&page.text, &options)?;
    let best = super::argmax_earliest(&scores).expect("a question has at least two options");
    let total: f64 = scores.iter().sum();
    let confidence = if total > 0.0 {
        scores[best] / total
    } else {
        1.0 / scores.len() as f64
    };
    Ok(AnswerAttempt {
        label: question.options[best].label,
        confidence,
        source: AnswerSource::Baseline,
        prompt_variant: PromptVariant::Base,
        raw_text: String::new(),
    })
}
