//! Deterministic token-set backend.

use std::collections::BTreeSet;
use std::path::Path;

use super::{
    gamma_bound, MergeOutcome, OracleStats, Relation, SemanticOracle, SummaryText,
    TokenFrequencies,
};
use crate::error::{Error, Result};

/// Embedded stopword list. Lines starting with `#` are comments.
pub const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// lowercase, strip ASCII punctuation, split on whitespace, drop stopwords.
#[derive(Debug, Clone)]
pub struct Normalizer {
    stopwords: BTreeSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::from_list(DEFAULT_STOPWORDS)
    }
}

impl Normalizer {
    /// Parses a stopword list, one word per line.
    pub fn from_list(list: &str) -> Self {
        let stopwords = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { stopwords }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let list = std::fs::read_to_string(path)?;
        Ok(Self::from_list(&list))
    }

    fn clean_word(word: &str) -> String {
        word.chars()
            .filter(|c| !c.is_ascii_punctuation())
            .flat_map(char::to_lowercase)
            .collect()
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Normalized tokens in first-occurrence order, without duplicates.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            let w = Self::clean_word(raw);
            if w.is_empty() || self.stopwords.contains(&w) {
                continue;
            }
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    }

    pub fn token_set(&self, text: &str) -> BTreeSet<String> {
        self.tokens(text).into_iter().collect()
    }

    /// Normalized form of a single whitespace word, `None` when it carries no
    /// information (empty after stripping, or a stopword).
    fn informative(&self, word: &str) -> Option<String> {
        let w = Self::clean_word(word);
        (!w.is_empty() && !self.stopwords.contains(&w)).then_some(w)
    }
}

/// Reference oracle over normalized token sets.
///
/// * relation: equal sets are `Equivalent`, a proper subset is `Ancestor`.
/// * similarity: Jaccard coefficient.
/// * merge: set intersection, refused when it does not strictly generalize.
/// * abstraction: drop the least informative words (stopwords, then the most
///   frequent in the corpus, later positions first on ties).
#[derive(Debug, Default)]
pub struct TokenOracle {
    normalizer: Normalizer,
    stats: OracleStats,
}

impl TokenOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_normalizer(normalizer: Normalizer) -> Self {
        Self {
            normalizer,
            stats: OracleStats::default(),
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn check(text: &str) -> Result<()> {
        if text.trim().is_empty() {
            Err(Error::invalid("oracle input is empty"))
        } else {
            Ok(())
        }
    }

    fn drop_words(
        &self,
        summary: &SummaryText,
        target: usize,
        freq: &TokenFrequencies,
    ) -> SummaryText {
        let words: Vec<&str> = summary.words().collect();
        if words.len() <= target {
            return summary.clone();
        }
        // (noise, frequency, position): larger keys are dropped first.
        let mut order: Vec<(bool, u64, usize)> = words
            .iter()
            .enumerate()
            .map(|(pos, w)| match self.normalizer.informative(w) {
                Some(tok) => (false, freq.count(&tok), pos),
                None => (true, u64::MAX, pos),
            })
            .collect();
        order.sort_unstable_by(|a, b| b.cmp(a));
        let dropped: BTreeSet<usize> = order[..words.len() - target]
            .iter()
            .map(|&(_, _, pos)| pos)
            .collect();
        let kept: Vec<&str> = words
            .iter()
            .enumerate()
            .filter(|(pos, _)| !dropped.contains(pos))
            .map(|(_, w)| *w)
            .collect();
        SummaryText::new(kept.join(" "), usize::MAX).expect("target is at least one word")
    }
}

impl SemanticOracle for TokenOracle {
    fn get_relation(&self, a: &str, b: &str) -> Result<Relation> {
        Self::check(a)?;
        Self::check(b)?;
        self.stats.bump_relation();
        if a == b {
            return Ok(Relation::Equivalent);
        }
        let (ta, tb) = (self.normalizer.token_set(a), self.normalizer.token_set(b));
        if ta.is_empty() || tb.is_empty() {
            return Ok(Relation::Unrelated);
        }
        Ok(if ta == tb {
            Relation::Equivalent
        } else if ta.is_subset(&tb) {
            Relation::Ancestor
        } else {
            Relation::Unrelated
        })
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Self::check(a)?;
        Self::check(b)?;
        self.stats.bump_similarity();
        if a == b {
            return Ok(1.0);
        }
        let (ta, tb) = (self.normalizer.token_set(a), self.normalizer.token_set(b));
        let union = ta.union(&tb).count();
        if union == 0 {
            return Ok(0.0);
        }
        let inter = ta.intersection(&tb).count();
        Ok(inter as f64 / union as f64)
    }

    fn merge_concepts(
        &self,
        a: &SummaryText,
        b: &SummaryText,
        _parent: Option<&SummaryText>,
    ) -> Result<MergeOutcome> {
        self.stats.bump_merge();
        let ta = self.normalizer.tokens(a.as_str());
        let sb = self.normalizer.token_set(b.as_str());
        let sa: BTreeSet<String> = ta.iter().cloned().collect();
        if a == b || (!sa.is_empty() && sa == sb) {
            return Ok(MergeOutcome::Merged(a.clone()));
        }
        let common: Vec<String> = ta.into_iter().filter(|t| sb.contains(t)).collect();
        if common.is_empty() || common.len() == sa.len() || common.len() == sb.len() {
            return Ok(MergeOutcome::Refused);
        }
        Ok(MergeOutcome::Merged(SummaryText::new(
            common.join(" "),
            usize::MAX,
        )?))
    }

    fn abstraction_chain(
        &self,
        summary: &SummaryText,
        levels: usize,
        gamma: f64,
        freq: &TokenFrequencies,
    ) -> Result<Vec<SummaryText>> {
        if levels == 0 {
            return Err(Error::invalid("abstraction levels must be positive"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} outside (0, 1)")));
        }
        self.stats.bump_abstraction();
        let mut chain = vec![summary.clone()];
        while chain.len() < levels {
            let cur = chain.last().expect("chain is non-empty");
            let wc = cur.word_count();
            if wc <= 1 {
                break;
            }
            let target = gamma_bound(gamma, wc).min(wc - 1).max(1);
            let next = self.drop_words(cur, target, freq);
            chain.push(next);
        }
        Ok(chain)
    }

    fn compress(
        &self,
        summary: &SummaryText,
        target_words: usize,
        freq: &TokenFrequencies,
    ) -> Result<SummaryText> {
        if target_words == 0 {
            return Err(Error::invalid("compression target must be positive"));
        }
        self.stats.bump_abstraction();
        Ok(self.drop_words(summary, target_words, freq))
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        self.normalizer.tokens(text)
    }

    fn stats(&self) -> &OracleStats {
        &self.stats
    }
}
