//! Word n-gram and boundary-padded character n-gram analyzers.
//!
//! Both analyzers apply full Unicode case folding first, so Cyrillic and
//! Latin text normalize the same way on every platform.

use serde::{Deserialize, Serialize};

/// Inclusive n-gram length range with `1 <= lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct NgramRange {
    lo: usize,
    hi: usize,
}

impl NgramRange {
    pub const WORD_DEFAULT: NgramRange = NgramRange { lo: 1, hi: 2 };
    pub const CHAR_DEFAULT: NgramRange = NgramRange { lo: 3, hi: 5 };

    pub fn new(lo: usize, hi: usize) -> Result<Self, String> {
        if lo == 0 || lo > hi {
            return Err(format!("invalid n-gram range ({lo}, {hi}): need 1 <= lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }
}

impl TryFrom<(usize, usize)> for NgramRange {
    type Error = String;

    fn try_from((lo, hi): (usize, usize)) -> Result<Self, String> {
        Self::new(lo, hi)
    }
}

impl From<NgramRange> for (usize, usize) {
    fn from(r: NgramRange) -> Self {
        (r.lo, r.hi)
    }
}

pub fn fold_case(text: &str) -> String {
    caseless::default_case_fold_str(text)
}

/// Case-folded word n-grams. Words are maximal runs of letters and digits;
/// n-grams are joined with a single space. Output order is by n, then by
/// position, and repeated n-grams are repeated in the output.
pub fn word_tokens(text: &str, range: NgramRange) -> Vec<String> {
    let folded = fold_case(text);
    let words: Vec<&str> = folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let mut out = Vec::new();
    for n in range.lo..=range.hi {
        out.extend(words.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Case-folded character n-grams computed per whitespace-delimited token,
/// with `marker` added once on each side of the token. Tokens shorter than
/// `n - 2` codepoints contribute nothing at length `n`.
pub fn char_ngrams(text: &str, range: NgramRange, marker: char) -> Vec<String> {
    let folded = fold_case(text);
    let mut out = Vec::new();
    let mut padded: Vec<char> = Vec::new();
    for token in folded.split_whitespace() {
        padded.clear();
        padded.push(marker);
        padded.extend(token.chars());
        padded.push(marker);
        for n in range.lo..=range.hi {
            out.extend(padded.windows(n).map(|w| w.iter().collect::<String>()));
        }
    }
    out
}
