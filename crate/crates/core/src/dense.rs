//! Exact cosine vector store and the two-stage retrieve-then-rerank cascade.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Embedding, EmbeddingBackend, RerankBackend};
use crate::corpus::{Corpus, PageKey};
use crate::retrieval::{compare_ranked, RetrievalResult, ScoredPage};
use crate::sparse::{IndexError, TfidfIndex};

pub const STORE_FORMAT_VERSION: u32 = 1;
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("vector store would be empty: no page has embeddable text")]
    EmptyStore,
    #[error("invalid retrieval configuration: {0}")]
    Config(String),
    #[error("page {0} is not in the corpus")]
    MissingPage(PageKey),
    #[error("malformed vector store: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Page embeddings, unit-normalized, keyed by `(doc_id, page_number)` in
/// ascending order. Pages with blank text are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    pub format_version: u32,
    dimension: usize,
    keys: Vec<PageKey>,
    /// Row-major, `keys.len() * dimension` values.
    data: Vec<f64>,
}

impl VectorStore {
    pub fn build(
        corpus: &Corpus,
        embedder: &dyn EmbeddingBackend,
        batch_size: usize,
    ) -> Result<Self, RetrievalError> {
        let pages: Vec<_> = corpus
            .pages()
            .iter()
            .filter(|p| !p.text.trim().is_empty())
            .collect();
        if pages.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let mut keys = Vec::with_capacity(pages.len());
        let mut rows = Vec::with_capacity(pages.len());
        for batch in pages.chunks(batch_size.max(1)) {
            let texts: Vec<&str> = batch.iter().map(|p| p.text.as_str()).collect();
            let vectors = embedder.embed(&texts)?;
            if vectors.len() != texts.len() {
                return Err(BackendError::LengthMismatch {
                    expected: texts.len(),
                    found: vectors.len(),
                }
                .into());
            }
            for (page, v) in batch.iter().zip(vectors) {
                keys.push(page.key.clone());
                rows.push(v);
            }
        }
        Self::from_rows(keys, rows)
    }

    /// Normalizes and stores `rows`; keys must be unique and rows share a
    /// dimension. Rows are re-sorted by key.
    pub fn from_rows(keys: Vec<PageKey>, rows: Vec<Embedding>) -> Result<Self, RetrievalError> {
        if keys.len() != rows.len() {
            return Err(BackendError::LengthMismatch {
                expected: keys.len(),
                found: rows.len(),
            }
            .into());
        }
        let dimension = rows.first().ok_or(RetrievalError::EmptyStore)?.dimension();
        let mut pairs: Vec<(PageKey, Embedding)> = keys.into_iter().zip(rows).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(RetrievalError::Malformed("duplicate keys".into()));
        }
        let mut data = Vec::with_capacity(pairs.len() * dimension);
        let mut keys = Vec::with_capacity(pairs.len());
        for (key, row) in pairs {
            if row.dimension() != dimension {
                return Err(BackendError::DimensionMismatch {
                    expected: dimension,
                    found: row.dimension(),
                }
                .into());
            }
            let unit = row.normalized().ok_or_else(|| {
                RetrievalError::Malformed(format!("zero embedding for page {key}"))
            })?;
            data.extend_from_slice(unit.values());
            keys.push(key);
        }
        Ok(Self {
            format_version: STORE_FORMAT_VERSION,
            dimension,
            keys,
            data,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn keys(&self) -> &[PageKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Full-scan cosine ranking for an already-embedded query.
    pub fn query_vector(&self, query: &Embedding, k: usize) -> Result<RetrievalResult, RetrievalError> {
        if query.dimension() != self.dimension {
            return Err(BackendError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            }
            .into());
        }
        let scores: Vec<f64> = match query.normalized() {
            Some(q) => (0..self.len())
                .map(|i| self.row(i).iter().zip(q.values()).map(|(a, b)| a * b).sum())
                .collect(),
            None => vec![0.0; self.len()],
        };
        Ok(RetrievalResult::top_k(self.keys.iter().cloned().zip(scores), k))
    }

    pub fn query(
        &self,
        text: &str,
        k: usize,
        embedder: &dyn EmbeddingBackend,
    ) -> Result<RetrievalResult, RetrievalError> {
        let mut v = embedder.embed(&[text])?;
        if v.len() != 1 {
            return Err(BackendError::LengthMismatch {
                expected: 1,
                found: v.len(),
            }
            .into());
        }
        self.query_vector(&v.remove(0), k)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), RetrievalError> {
        serde_json::to_writer(&mut out, self).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, RetrievalError> {
        let mut buf = String::new();
        input.read_to_string(&mut buf)?;
        let store: Self =
            serde_json::from_str(&buf).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        if store.format_version != STORE_FORMAT_VERSION {
            return Err(RetrievalError::Malformed(format!(
                "unsupported format version {}",
                store.format_version
            )));
        }
        if store.dimension == 0 || store.data.len() != store.keys.len() * store.dimension {
            return Err(RetrievalError::Malformed("data length does not match keys".into()));
        }
        if store.keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RetrievalError::Malformed("keys not sorted and unique".into()));
        }
        for i in 0..store.len() {
            let norm = store.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(RetrievalError::Malformed(format!("row {i} is not unit norm")));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::read_from(fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstStage {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub first_stage: FirstStage,
    pub first_stage_k: usize,
    pub rerank_k: usize,
    pub context_pages: usize,
    /// Characters of page text sent to the reranker.
    pub rerank_char_budget: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            first_stage: FirstStage::Dense,
            first_stage_k: 50,
            rerank_k: 10,
            context_pages: 3,
            rerank_char_budget: 4000,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let err = |m: &str| Err(RetrievalError::Config(m.to_string()));
        if self.first_stage_k == 0 || self.rerank_k == 0 || self.context_pages == 0 {
            return err("first_stage_k, rerank_k and context_pages must be positive");
        }
        if self.rerank_k > self.first_stage_k {
            return err("rerank_k must not exceed first_stage_k");
        }
        if self.context_pages > self.rerank_k {
            return err("context_pages must not exceed rerank_k");
        }
        Ok(())
    }
}

/// First stage plus optional reranker over one corpus.
#[derive(Clone, Copy)]
pub struct Cascade<'a> {
    pub config: CascadeConfig,
    pub corpus: &'a Corpus,
    pub sparse: Option<&'a TfidfIndex>,
    pub store: Option<&'a VectorStore>,
    pub embedder: Option<&'a dyn EmbeddingBackend>,
    pub reranker: Option<&'a dyn RerankBackend>,
}

impl<'a> Cascade<'a> {
    pub fn first_stage(&self, query: &str) -> Result<RetrievalResult, RetrievalError> {
        let k = self.config.first_stage_k;
        match self.config.first_stage {
            FirstStage::Sparse => {
                let index = self
                    .sparse
                    .ok_or_else(|| RetrievalError::Config("sparse first stage has no index".into()))?;
                Ok(index.query(query, k))
            }
            FirstStage::Dense => {
                let store = self
                    .store
                    .ok_or_else(|| RetrievalError::Config("dense first stage has no vector store".into()))?;
                let embedder = self
                    .embedder
                    .ok_or_else(|| RetrievalError::Config("dense first stage has no embedder".into()))?;
                store.query(query, k, embedder)
            }
        }
    }

    /// Stage one, then reranks its top `rerank_k` candidates. Without a
    /// reranker the top `rerank_k` stage-one entries are returned as is.
    pub fn retrieve(&self, query: &str) -> Result<RetrievalResult, RetrievalError> {
        self.config.validate()?;
        let mut candidates = self.first_stage(query)?;
        candidates.entries.truncate(self.config.rerank_k);
        let Some(reranker) = self.reranker else {
            return Ok(candidates);
        };
        if candidates.is_empty() {
            return Ok(candidates);
        }
        let texts = candidates
            .entries
            .iter()
            .map(|e| {
                self.corpus
                    .get(&e.key)
                    .map(|p| truncate_chars(&p.text, self.config.rerank_char_budget))
                    .ok_or_else(|| RetrievalError::MissingPage(e.key.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let scores = reranker.rerank(query, &refs)?;
        if scores.len() != refs.len() {
            return Err(BackendError::LengthMismatch {
                expected: refs.len(),
                found: scores.len(),
            }
            .into());
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::Backend {
                status: None,
                message: "reranker returned a non-finite score".into(),
            }
            .into());
        }
        let mut entries: Vec<ScoredPage> = candidates
            .entries
            .into_iter()
            .zip(scores)
            .map(|(e, score)| ScoredPage { key: e.key, score })
            .collect();
        entries.sort_by(compare_ranked);
        Ok(RetrievalResult { entries })
    }
}

pub(crate) fn truncate_chars(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => text[..byte].to_string(),
        None => text.to_string(),
    }
}
