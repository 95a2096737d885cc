//! Page-level corpus and multiple-choice question set.
//!
//! A [`Corpus`] is an immutable, sorted collection of [`Page`]s keyed by
//! `(doc_id, page_number)`. Questions carry lettered options and optional
//! gold labels used by the evaluation module.

mod load;
pub mod tokenize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use load::{
    load_corpus, load_questions, parse_corpus, parse_questions, write_corpus, write_questions,
};
pub use tokenize::{char_ngrams, fold_case, word_tokens, NgramRange};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate page ({doc_id}, {page_number}) at line {line}")]
    DuplicatePage {
        doc_id: String,
        page_number: u32,
        line: usize,
    },
    #[error("corpus contains no pages")]
    EmptyCorpus,
    #[error("line {line}: empty page text for ({doc_id}, {page_number}) and empty pages are not allowed")]
    EmptyPage {
        doc_id: String,
        page_number: u32,
        line: usize,
    },
    #[error("duplicate question id {0:?}")]
    DuplicateQuestionId(String),
    #[error("question {question_id:?}: {message}")]
    BadOptionLabels { question_id: String, message: String },
}

/// Reference to a single page of a single document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageKey {
    pub doc_id: String,
    pub page_number: u32,
}

impl PageKey {
    pub fn new(doc_id: impl Into<String>, page_number: u32) -> Self {
        Self {
            doc_id: doc_id.into(),
            page_number,
        }
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.page_number)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub key: PageKey,
    pub text: String,
}

impl Page {
    pub fn doc_id(&self) -> &str {
        &self.key.doc_id
    }

    pub fn page_number(&self) -> u32 {
        self.key.page_number
    }
}

/// Validated page collection, sorted by `(doc_id, page_number)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pages: Vec<Page>,
    doc_index: BTreeMap<String, BTreeSet<u32>>,
}

impl Corpus {
    /// Builds a corpus from pages in any order.
    ///
    /// Rejects duplicate keys, page number 0 and (unless `allow_empty_pages`)
    /// pages whose text is empty after trimming. Line numbers in errors are
    /// the 1-based positions in `pages`.
    pub fn from_pages(pages: Vec<Page>, allow_empty_pages: bool) -> Result<Self, CorpusError> {
        if pages.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for (i, page) in pages.iter().enumerate() {
            if page.key.page_number == 0 {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: "page must be >= 1".into(),
                });
            }
            if !allow_empty_pages && page.text.trim().is_empty() {
                return Err(CorpusError::EmptyPage {
                    doc_id: page.key.doc_id.clone(),
                    page_number: page.key.page_number,
                    line: i + 1,
                });
            }
            if !seen.insert(&page.key) {
                return Err(CorpusError::DuplicatePage {
                    doc_id: page.key.doc_id.clone(),
                    page_number: page.key.page_number,
                    line: i + 1,
                });
            }
        }
        let mut pages = pages;
        pages.sort_by(|a, b| a.key.cmp(&b.key));
        let mut doc_index: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for page in &pages {
            doc_index
                .entry(page.key.doc_id.clone())
                .or_default()
                .insert(page.key.page_number);
        }
        Ok(Self { pages, doc_index })
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn doc_index(&self) -> &BTreeMap<String, BTreeSet<u32>> {
        &self.doc_index
    }

    pub fn get(&self, key: &PageKey) -> Option<&Page> {
        self.pages
            .binary_search_by(|p| p.key.cmp(key))
            .ok()
            .map(|i| &self.pages[i])
    }

    pub fn contains(&self, key: &PageKey) -> bool {
        self.get(key).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub answer: char,
    pub page: PageKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    pub options: Vec<AnswerOption>,
    pub gold: Option<GoldLabel>,
}

impl Question {
    /// Creates a question with options labeled A, B, C, ... in order.
    pub fn new(
        question_id: impl Into<String>,
        text: impl Into<String>,
        options: Vec<String>,
        gold: Option<GoldLabel>,
    ) -> Result<Self, CorpusError> {
        let options = options
            .into_iter()
            .enumerate()
            .map(|(i, text)| AnswerOption {
                label: label_for_index(i).unwrap_or('?'),
                text,
            })
            .collect();
        let q = Self {
            question_id: question_id.into(),
            text: text.into(),
            options,
            gold,
        };
        q.validate()?;
        Ok(q)
    }

    /// Checks that labels are unique, consecutive from `A`, and that the gold
    /// answer (when present) is one of them.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: String| CorpusError::BadOptionLabels {
            question_id: self.question_id.clone(),
            message,
        };
        if self.options.len() < 2 {
            return Err(bad(format!(
                "need at least 2 options, got {}",
                self.options.len()
            )));
        }
        if self.options.len() > 26 {
            return Err(bad(format!(
                "at most 26 options supported, got {}",
                self.options.len()
            )));
        }
        for (i, opt) in self.options.iter().enumerate() {
            let expected = label_for_index(i).expect("checked above");
            if opt.label != expected {
                return Err(bad(format!(
                    "option {} has label {:?}, expected {:?}",
                    i + 1,
                    opt.label,
                    expected
                )));
            }
        }
        if let Some(gold) = &self.gold {
            if !self.has_label(gold.answer) {
                return Err(bad(format!(
                    "gold answer {:?} is not an option label",
                    gold.answer
                )));
            }
            if gold.page.page_number == 0 {
                return Err(bad("gold page must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.label)
    }

    pub fn has_label(&self, label: char) -> bool {
        self.options.iter().any(|o| o.label == label)
    }

    pub fn option(&self, label: char) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn first_label(&self) -> char {
        self.options[0].label
    }
}

/// `0 -> 'A'`, `25 -> 'Z'`.
pub fn label_for_index(i: usize) -> Option<char> {
    (i < 26).then(|| (b'A' + i as u8) as char)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(doc: &str, n: u32, text: &str) -> Page {
        Page {
            key: PageKey::new(doc, n),
            text: text.into(),
        }
    }

    #[test]
    fn pages_are_sorted_and_indexed() {
        let corpus = Corpus::from_pages(
            vec![page("b", 2, "x"), page("a", 3, "y"), page("b", 1, "z")],
            false,
        )
        .unwrap();
        let keys: Vec<_> = corpus.pages().iter().map(|p| p.key.to_string()).collect();
        assert_eq!(keys, ["a#3", "b#1", "b#2"]);
        assert_eq!(corpus.doc_index()["b"].len(), 2);
        assert!(corpus.contains(&PageKey::new("a", 3)));
        assert!(!corpus.contains(&PageKey::new("a", 1)));
    }

    #[test]
    fn empty_page_needs_flag() {
        let pages = vec![page("a", 1, "  ")];
        assert!(matches!(
            Corpus::from_pages(pages.clone(), false),
            Err(CorpusError::EmptyPage { .. })
        ));
        assert!(Corpus::from_pages(pages, true).is_ok());
    }

    #[test]
    fn question_requires_two_options() {
        let err = Question::new("q", "?", vec!["only".into()], None).unwrap_err();
        assert!(matches!(err, CorpusError::BadOptionLabels { .. }));
    }

    #[test]
    fn gold_answer_must_be_a_label() {
        let gold = GoldLabel {
            answer: 'E',
            page: PageKey::new("d", 1),
        };
        let err = Question::new("q", "?", vec!["a".into(), "b".into()], Some(gold)).unwrap_err();
        assert!(matches!(err, CorpusError::BadOptionLabels { .. }));
    }
}
