//! TF-IDF page retrieval over word n-grams, boundary-padded character
//! n-grams, or a late-fused hybrid of both.
//!
//! Weighting is sublinear tf with smoothed idf:
//!
//! ```text
//! tf(t, p)  = 1 + ln(count(t, p))
//! idf(t)    = ln((1 + N) / (1 + df(t))) + 1
//! w(t, p)   = tf(t, p) * idf(t), then L2-normalized per page
//! ```
//!
//! Queries use the same weighting against the index idf, ignoring unseen
//! terms, and are scored by cosine similarity. The hybrid score is
//! `hybrid_weight * word_cosine + (1 - hybrid_weight) * char_cosine`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_ngrams, word_tokens, Corpus, NgramRange, PageKey};
use crate::retrieval::RetrievalResult;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("hybrid weight must lie in [0, 1], got {0}")]
    BadHybridWeight(f64),
    #[error("unsupported index format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("malformed index file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Word,
    Char,
    Hybrid,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "word" => Ok(Variant::Word),
            "char" => Ok(Variant::Char),
            "hybrid" => Ok(Variant::Hybrid),
            other => Err(format!("unknown index variant {other:?} (word|char|hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseConfig {
    pub word_ngrams: NgramRange,
    pub char_ngrams: NgramRange,
    pub hybrid_weight: f64,
    pub boundary_marker: char,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            word_ngrams: NgramRange::WORD_DEFAULT,
            char_ngrams: NgramRange::CHAR_DEFAULT,
            hybrid_weight: 0.5,
            boundary_marker: ' ',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Analyzer {
    Word { range: NgramRange },
    Char { range: NgramRange, marker: char },
}

impl Analyzer {
    pub fn terms(&self, text: &str) -> Vec<String> {
        match *self {
            Analyzer::Word { range } => word_tokens(text, range),
            Analyzer::Char { range, marker } => char_ngrams(text, range, marker),
        }
    }

    /// Raw term counts, keyed and ordered by term.
    pub fn term_counts(&self, text: &str) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for t in self.terms(text) {
            *counts.entry(t).or_insert(0) += 1;
        }
        counts
    }
}

/// Sparse vector with strictly increasing term ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub terms: Vec<u32>,
    pub weights: Vec<f64>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for w in &mut self.weights {
                *w /= norm;
            }
        }
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].cmp(&other.terms[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.weights[i] * other.weights[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

#[inline]
pub fn sublinear_tf(count: u32) -> f64 {
    1.0 + (count as f64).ln()
}

#[inline]
pub fn smoothed_idf(n_pages: usize, df: usize) -> f64 {
    ((1.0 + n_pages as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// One TF-IDF space: a vocabulary, its idf table and per-page vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpace {
    pub analyzer: Analyzer,
    pub vocabulary: BTreeMap<String, u32>,
    pub idf: Vec<f64>,
    pub page_vectors: Vec<SparseVector>,
    #[serde(skip)]
    postings: Vec<Vec<(u32, f64)>>,
}

impl TermSpace {
    fn build(texts: &[&str], analyzer: Analyzer) -> Self {
        let counts: Vec<BTreeMap<String, u32>> =
            texts.iter().map(|t| analyzer.term_counts(t)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for page in &counts {
            for term in page.keys() {
                *df.entry(term.as_str()).or_insert(0) += 1;
            }
        }
        let vocabulary: BTreeMap<String, u32> = df
            .keys()
            .enumerate()
            .map(|(id, term)| (term.to_string(), id as u32))
            .collect();
        let idf: Vec<f64> = df.values().map(|&d| smoothed_idf(texts.len(), d)).collect();
        let page_vectors = counts
            .iter()
            .map(|page| {
                let mut v = SparseVector::default();
                // BTreeMap order == vocabulary id order
                for (term, &c) in page {
                    let id = vocabulary[term];
                    v.terms.push(id);
                    v.weights.push(sublinear_tf(c) * idf[id as usize]);
                }
                v.normalize();
                v
            })
            .collect();
        let mut space = Self {
            analyzer,
            vocabulary,
            idf,
            page_vectors,
            postings: Vec::new(),
        };
        space.rebuild_postings();
        space
    }

    fn rebuild_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.idf.len()];
        for (page, v) in self.page_vectors.iter().enumerate() {
            for (&t, &w) in v.terms.iter().zip(&v.weights) {
                postings[t as usize].push((page as u32, w));
            }
        }
        self.postings = postings;
    }

    /// Query vector in this space; unseen terms are dropped before
    /// normalization.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut v = SparseVector::default();
        let mut known: Vec<(u32, u32)> = self
            .analyzer
            .term_counts(text)
            .into_iter()
            .filter_map(|(term, c)| self.vocabulary.get(&term).map(|&id| (id, c)))
            .collect();
        known.sort_unstable();
        for (id, c) in known {
            v.terms.push(id);
            v.weights.push(sublinear_tf(c) * self.idf[id as usize]);
        }
        v.normalize();
        v
    }

    /// Cosine against every page, in page order.
    fn cosines(&self, query: &SparseVector) -> Vec<f64> {
        let mut scores = vec![0.0; self.page_vectors.len()];
        for (&t, &qw) in query.terms.iter().zip(&query.weights) {
            for &(page, pw) in &self.postings[t as usize] {
                scores[page as usize] += qw * pw;
            }
        }
        for s in &mut scores {
            *s = s.clamp(0.0, 1.0);
        }
        scores
    }

    fn validate(&self, n_pages: usize) -> Result<(), IndexError> {
        let bad = |m: &str| Err(IndexError::Malformed(m.to_string()));
        if self.page_vectors.len() != n_pages {
            return bad("page vector count does not match key count");
        }
        if self.idf.len() != self.vocabulary.len() {
            return bad("idf length does not match vocabulary size");
        }
        let mut ids: Vec<u32> = self.vocabulary.values().copied().collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| i as u32 != id) {
            return bad("vocabulary ids are not dense");
        }
        if self.idf.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("negative or non-finite idf");
        }
        for v in &self.page_vectors {
            if v.terms.len() != v.weights.len()
                || v.terms.windows(2).any(|w| w[0] >= w[1])
                || v.terms.last().is_some_and(|&t| t as usize >= self.idf.len())
            {
                return bad("malformed page vector");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfIndex {
    pub format_version: u32,
    pub variant: Variant,
    pub config: SparseConfig,
    pub keys: Vec<PageKey>,
    pub word: Option<TermSpace>,
    #[serde(rename = "char")]
    pub chars: Option<TermSpace>,
}

impl TfidfIndex {
    pub fn build(corpus: &Corpus, variant: Variant, config: SparseConfig) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        if !(0.0..=1.0).contains(&config.hybrid_weight) {
            return Err(IndexError::BadHybridWeight(config.hybrid_weight));
        }
        let texts: Vec<&str> = corpus.pages().iter().map(|p| p.text.as_str()).collect();
        let word = matches!(variant, Variant::Word | Variant::Hybrid).then(|| {
            TermSpace::build(&texts, Analyzer::Word { range: config.word_ngrams })
        });
        let chars = matches!(variant, Variant::Char | Variant::Hybrid).then(|| {
            TermSpace::build(
                &texts,
                Analyzer::Char {
                    range: config.char_ngrams,
                    marker: config.boundary_marker,
                },
            )
        });
        Ok(Self {
            format_version: INDEX_FORMAT_VERSION,
            variant,
            config,
            keys: corpus.pages().iter().map(|p| p.key.clone()).collect(),
            word,
            chars,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Per-page cosine scores in key order.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let cos = |space: &Option<TermSpace>| {
            let space = space.as_ref().expect("variant guarantees the term space");
            space.cosines(&space.vectorize(text))
        };
        match self.variant {
            Variant::Word => cos(&self.word),
            Variant::Char => cos(&self.chars),
            Variant::Hybrid => {
                let lambda = self.config.hybrid_weight;
                cos(&self.word)
                    .into_iter()
                    .zip(cos(&self.chars))
                    .map(|(w, c)| lambda * w + (1.0 - lambda) * c)
                    .collect()
            }
        }
    }

    pub fn query(&self, text: &str, k: usize) -> RetrievalResult {
        RetrievalResult::top_k(self.keys.iter().cloned().zip(self.scores(text)), k)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), IndexError> {
        serde_json::to_writer(&mut out, self).map_err(|e| IndexError::Malformed(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, IndexError> {
        let mut buf = String::new();
        input.read_to_string(&mut buf)?;
        let probe: serde_json::Value =
            serde_json::from_str(&buf).map_err(|e| IndexError::Malformed(e.to_string()))?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| IndexError::Malformed("missing format_version".into()))?;
        if found != INDEX_FORMAT_VERSION as u64 {
            return Err(IndexError::FormatVersion {
                found: found as u32,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let mut index: Self =
            serde_json::from_value(probe).map_err(|e| IndexError::Malformed(e.to_string()))?;
        let expect_word = matches!(index.variant, Variant::Word | Variant::Hybrid);
        let expect_char = matches!(index.variant, Variant::Char | Variant::Hybrid);
        if index.word.is_some() != expect_word || index.chars.is_some() != expect_char {
            return Err(IndexError::Malformed("term spaces do not match variant".into()));
        }
        let n = index.keys.len();
        for space in index.word.iter_mut().chain(index.chars.iter_mut()) {
            space.validate(n)?;
            space.rebuild_postings();
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::read_from(fs::File::open(path)?)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.word.as_ref().map_or(0, |s| s.vocabulary.len())
            + self.chars.as_ref().map_or(0, |s| s.vocabulary.len())
    }
}
