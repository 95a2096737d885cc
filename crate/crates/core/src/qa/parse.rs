use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AnswerSource, QaError};
use crate::backends::EmbeddingBackend;
use crate::corpus::{fold_case, Question};

/// How `parse_answer` resolves replies that name no option.
#[derive(Clone, Copy)]
pub enum AnswerFallback<'a> {
    Disabled,
    /// Pick the option whose embedding is closest to the reply.
    Embeddings(&'a dyn EmbeddingBackend),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub label: char,
    pub source: AnswerSource,
}

const OPEN: &str = r#"[\(\[\*"'«]*"#;
const CLOSE: &str = r#"[\)\]\*"'».,:;!]"#;

static PREFIXED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i:відповідь|answer)\s*[:：\-–—]?\s*{OPEN}\s*([A-ZАВСЕНКМОРТХ])(?:{CLOSE}|\s|$)"
    ))
    .expect("valid regex")
});

static LEADING_LATIN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"^\s*{OPEN}\s*([A-Z])(?:{CLOSE}|\s|$)")).expect("valid regex")
});

// A leading Cyrillic look-alike is only a label when punctuated or alone,
// since "В" and "А" are also ordinary words.
static LEADING_CYRILLIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"^\s*{OPEN}\s*([АВСЕНКМОРТХ])\s*(?:{CLOSE}|$)")).expect("valid regex")
});

static STANDALONE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[^\p{L}\p{N}])([A-Z])(?:[^\p{L}\p{N}]|$)").expect("valid regex"));

fn latin_label(c: char) -> char {
    match c {
        'А' => 'A',
        'В' => 'B',
        'С' => 'C',
        'Е' => 'E',
        'Н' => 'H',
        'К' => 'K',
        'М' => 'M',
        'О' => 'O',
        'Р' => 'P',
        'Т' => 'T',
        'Х' => 'X',
        other => other,
    }
}

fn letter_rule(raw: &str, question: &Question) -> Option<char> {
    let valid = |c: char| {
        let l = latin_label(c);
        question.has_label(l).then_some(l)
    };
    for re in [&*PREFIXED, &*LEADING_LATIN, &*LEADING_CYRILLIC] {
        if let Some(l) = re
            .captures_iter(raw)
            .filter_map(|c| c[1].chars().next())
            .find_map(valid)
        {
            return Some(l);
        }
    }
    STANDALONE
        .captures_iter(raw)
        .filter_map(|c| c[1].chars().next())
        .find(|&c| question.has_label(c))
}

/// Longest option text contained in the reply (case-folded); ties go to the
/// earliest option.
fn full_text_rule(raw: &str, question: &Question) -> Option<char> {
    let folded = fold_case(raw);
    let mut best: Option<(usize, char)> = None;
    for opt in &question.options {
        let text = fold_case(opt.text.trim());
        if text.is_empty() || !folded.contains(&text) {
            continue;
        }
        let len = text.chars().count();
        if best.is_none_or(|(l, _)| len > l) {
            best = Some((len, opt.label));
        }
    }
    best.map(|(_, label)| label)
}

fn similarity_rule(raw: &str, question: &Question, embedder: &dyn EmbeddingBackend) -> char {
    let first = question.first_label();
    if raw.trim().is_empty() {
        return first;
    }
    let options: Vec<(char, &str)> = question
        .options
        .iter()
        .filter(|o| !o.text.trim().is_empty())
        .map(|o| (o.label, o.text.as_str()))
        .collect();
    if options.is_empty() {
        return first;
    }
    let mut texts = vec![raw];
    texts.extend(options.iter().map(|o| o.1));
    let Ok(vectors) = embedder.embed(&texts) else {
        return first;
    };
    if vectors.len() != texts.len() {
        return first;
    }
    let mut best = (f64::NEG_INFINITY, first);
    for ((label, _), v) in options.iter().zip(&vectors[1..]) {
        let s = vectors[0].cosine(v);
        if s > best.0 {
            best = (s, *label);
        }
    }
    best.1
}

/// Maps a model reply to an option label. Rules, first match wins:
///
/// 1. a standalone option letter, optionally wrapped in punctuation or
///    after "Відповідь:" / "Answer:";
/// 2. an option's full text appearing in the reply (case-folded);
/// 3. the option most similar to the reply in embedding space.
pub fn parse_answer(
    raw: &str,
    question: &Question,
    fallback: AnswerFallback<'_>,
) -> Result<ParsedAnswer, QaError> {
    if let Some(label) = letter_rule(raw, question) {
        return Ok(ParsedAnswer {
            label,
            source: AnswerSource::ParsedLetter,
        });
    }
    if let Some(label) = full_text_rule(raw, question) {
        return Ok(ParsedAnswer {
            label,
            source: AnswerSource::OptionText,
        });
    }
    match fallback {
        AnswerFallback::Disabled => Err(QaError::UnparseableAnswer(raw.chars().take(200).collect())),
        AnswerFallback::Embeddings(embedder) => Ok(ParsedAnswer {
            label: similarity_rule(raw, question, embedder),
            source: AnswerSource::SimilarityFallback,
        }),
    }
}
