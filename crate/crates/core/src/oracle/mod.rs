//! Semantic judgments used by insertion, retrieval and merging.
//!
//! The tree never inspects summary text itself; every decision about how two
//! concepts relate goes through a [`SemanticOracle`]. The crate ships one
//! deterministic backend, [`TokenOracle`], that works on normalized token sets.

mod token;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use token::{Normalizer, TokenOracle, DEFAULT_STOPWORDS};

/// Default ceiling on summary length, in whitespace-separated words.
pub const DEFAULT_MAX_SUMMARY_WORDS: usize = 20;

/// Outcome of comparing two concepts, `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// `a` is a strictly more general concept than `b`.
    Ancestor,
    Equivalent,
    Unrelated,
}

impl Relation {
    /// The signed code used in the insertion algorithm: 1, 0 or -1.
    pub fn code(self) -> i8 {
        match self {
            Relation::Ancestor => 1,
            Relation::Equivalent => 0,
            Relation::Unrelated => -1,
        }
    }

    /// Whether descent may continue through a node with this relation.
    pub fn admits_descent(self) -> bool {
        matches!(self, Relation::Ancestor | Relation::Equivalent)
    }
}

/// A non-empty concept summary with a bounded word count.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SummaryText {
    text: String,
    word_count: usize,
}

impl SummaryText {
    pub fn new(text: impl Into<String>, max_words: usize) -> Result<Self> {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        if word_count == 0 {
            return Err(Error::invalid("summary text is empty"));
        }
        if word_count > max_words {
            return Err(Error::invalid(format!(
                "summary has {word_count} words, limit is {max_words}"
            )));
        }
        Ok(Self { text, word_count })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

impl fmt::Display for SummaryText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Result of asking the oracle to generalize two sibling concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeOutcome {
    Merged(SummaryText),
    /// No summary strictly generalizes both inputs.
    Refused,
}

/// Per-kind oracle call counters. Updates are atomic per counter.
#[derive(Debug, Default)]
pub struct OracleStats {
    relation: AtomicU64,
    similarity: AtomicU64,
    merge: AtomicU64,
    abstraction: AtomicU64,
}

/// A point-in-time copy of [`OracleStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub relation: u64,
    pub similarity: u64,
    pub merge: u64,
    pub abstraction: u64,
}

impl OracleCounts {
    pub fn total(&self) -> u64 {
        self.relation + self.similarity + self.merge + self.abstraction
    }

    /// Component-wise difference `self - earlier`.
    pub fn since(&self, earlier: &OracleCounts) -> OracleCounts {
        OracleCounts {
            relation: self.relation - earlier.relation,
            similarity: self.similarity - earlier.similarity,
            merge: self.merge - earlier.merge,
            abstraction: self.abstraction - earlier.abstraction,
        }
    }
}

impl OracleStats {
    pub(crate) fn bump_relation(&self) {
        self.relation.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_similarity(&self) {
        self.similarity.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_merge(&self) {
        self.merge.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_abstraction(&self) {
        self.abstraction.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OracleCounts {
        OracleCounts {
            relation: self.relation.load(Ordering::Relaxed),
            similarity: self.similarity.load(Ordering::Relaxed),
            merge: self.merge.load(Ordering::Relaxed),
            abstraction: self.abstraction.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.relation.store(0, Ordering::Relaxed);
        self.similarity.store(0, Ordering::Relaxed);
        self.merge.store(0, Ordering::Relaxed);
        self.abstraction.store(0, Ordering::Relaxed);
    }
}

/// Token occurrence counts over the concepts stored in a tree.
///
/// Keys are normalized tokens. Abstraction keeps rare tokens and drops
/// frequent ones first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenFrequencies {
    counts: BTreeMap<String, u64>,
}

impl TokenFrequencies {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tokens<I, S>(&mut self, tokens: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for t in tokens {
            *self.counts.entry(t.into()).or_insert(0) += 1;
        }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// The three semantic judgments the index relies on, plus abstraction.
///
/// Implementations must tolerate concurrent calls from several threads.
pub trait SemanticOracle: Send + Sync {
    /// How `a` relates to `b`; `Ancestor` means `a` is the more general one.
    fn get_relation(&self, a: &str, b: &str) -> Result<Relation>;

    /// Symmetric similarity in `[0, 1]`, with `similarity(a, a) == 1`.
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;

    /// Generalizes two sibling concepts under `parent` (absent for roots).
    fn merge_concepts(
        &self,
        a: &SummaryText,
        b: &SummaryText,
        parent: Option<&SummaryText>,
    ) -> Result<MergeOutcome>;

    /// Builds an abstraction chain, most specific first, of at most `levels`
    /// elements where each word count is at most `ceil(gamma * previous)`.
    fn abstraction_chain(
        &self,
        summary: &SummaryText,
        levels: usize,
        gamma: f64,
        freq: &TokenFrequencies,
    ) -> Result<Vec<SummaryText>>;

    /// Shortens `summary` to at most `target_words` words using the same
    /// token ranking as [`SemanticOracle::abstraction_chain`].
    fn compress(
        &self,
        summary: &SummaryText,
        target_words: usize,
        freq: &TokenFrequencies,
    ) -> Result<SummaryText>;

    /// Normalized tokens of `text`, used for corpus frequency bookkeeping.
    fn tokens(&self, text: &str) -> Vec<String>;

    fn stats(&self) -> &OracleStats;
}

/// `ceil(gamma * words)`, robust to floating error just above an integer.
pub fn gamma_bound(gamma: f64, words: usize) -> usize {
    let raw = gamma * words as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Checks the compression recurrence over consecutive chain elements.
pub fn chain_satisfies_gamma(chain: &[SummaryText], gamma: f64) -> bool {
    chain.windows(2).all(|w| {
        let (cur, next) = (w[0].word_count(), w[1].word_count());
        next >= 1 && next <= gamma_bound(gamma, cur)
    })
}
