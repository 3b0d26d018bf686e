//! Seeded generator for a balanced concept vocabulary.
//!
//! The vocabulary has `domains` top-level words, `fanout` subdomain words per
//! domain and `fanout` topic words per subdomain. An entity's concept is the
//! three words `domain subdomain topic`; its explanation repeats the concept
//! and adds a unique item token. Entity `i` lands on topic `i mod topics`,
//! with the domain varying fastest, so every prefix of the corpus is spread
//! evenly across the hierarchy.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Normalizer;
use crate::tree::EntityId;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub domains: usize,
    pub fanout: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            domains: 5,
            fanout: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub concept: String,
    pub explanation: String,
}

impl CorpusItem {
    pub fn id(&self) -> EntityId {
        EntityId::from_content(&self.concept, &self.explanation)
    }
}

/// Word tables for one vocabulary.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    spec: CorpusSpec,
    domain: Vec<String>,
    sub: Vec<String>,
    topic: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .flat_map(|_| {
            [
                CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.random_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

impl Vocabulary {
    pub fn new(spec: CorpusSpec) -> Result<Self> {
        if spec.domains == 0 || spec.fanout == 0 {
            return Err(Error::invalid("corpus needs at least one domain and fanout 1"));
        }
        let (d, t) = (spec.domains, spec.fanout);
        let total = d + d * t + d * t * t;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let stop = Normalizer::default();
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(total);
        while words.len() < total {
            let w = pseudo_word(&mut rng);
            if !stop.is_stopword(&w) && seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let topic = words.split_off(d + d * t);
        let sub = words.split_off(d);
        Ok(Self {
            spec,
            domain: words,
            sub,
            topic,
        })
    }

    pub fn spec(&self) -> CorpusSpec {
        self.spec
    }

    pub fn topic_count(&self) -> usize {
        self.topic.len()
    }

    /// Concept text for topic slot `k`; the domain varies fastest, then the
    /// subdomain, then the topic.
    pub fn concept(&self, k: usize) -> String {
        let (d, t) = (self.spec.domains, self.spec.fanout);
        let k = k % self.topic_count();
        let dom = k % d;
        let sub = (k / d) % t;
        let top = k / (d * t);
        format!(
            "{} {} {}",
            self.domain[dom],
            self.sub[dom * t + sub],
            self.topic[(dom * t + sub) * t + top]
        )
    }

    pub fn item(&self, i: usize) -> CorpusItem {
        let concept = self.concept(i);
        CorpusItem {
            explanation: format!("{concept} item{i:05}"),
            concept,
        }
    }

    pub fn items(&self, n: usize) -> Vec<CorpusItem> {
        (0..n).map(|i| self.item(i)).collect()
    }

    /// Query texts drawn uniformly from the topic concepts.
    pub fn queries(&self, count: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.concept(rng.random_range(0..self.topic_count())))
            .collect()
    }
}
