//! Ranked retrieval output shared by the sparse, dense and cascade retrievers.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::PageKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPage {
    pub key: PageKey,
    pub score: f64,
}

/// Pages in descending score order; ties broken by ascending
/// `(doc_id, page_number)`. Keys are unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredPage>,
}

impl RetrievalResult {
    /// Ranks `(key, score)` pairs and keeps the best `k`.
    pub fn top_k(scored: impl IntoIterator<Item = (PageKey, f64)>, k: usize) -> Self {
        let mut entries: Vec<ScoredPage> = scored
            .into_iter()
            .map(|(key, score)| ScoredPage { key, score })
            .collect();
        entries.sort_by(compare_ranked);
        entries.truncate(k);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The page predicted as supporting evidence.
    pub fn top(&self) -> Option<&ScoredPage> {
        self.entries.first()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PageKey> {
        self.entries.iter().map(|e| &e.key)
    }
}

/// Descending score, then ascending key.
pub fn compare_ranked(a: &ScoredPage, b: &ScoredPage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.key.cmp(&b.key))
}
