//! Scenario files and schedule generation.
//!
//! Scenarios are TOML documents with `version = 1`. Either list explicit
//! `[[events]]` or give generator parameters (`edits`, fractions, sync
//! cadence); the generated schedule always ends with an all-pairs sync to
//! quiescence.
//!
//! ```toml
//! version = 1
//! agents = 4
//! seed = 11
//! base_entities = 40
//! edits = 200
//! conflict_rate = 0.2
//! sync_every = 25
//! topology = "ring"
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::corpus::CorpusSpec;
use crate::tree::TreeConfig;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Agent `i` syncs with `i + 1` (wrapping).
    #[default]
    Ring,
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncStrategy {
    #[default]
    Partial,
    FullState,
}

/// One scheduled operation. Agent fields are zero-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    /// Insert corpus item `item` on `agent`.
    Insert { agent: usize, item: usize },
    /// Rewrite one node summary; the target is chosen when the event runs
    /// and is contended with probability `conflict_rate`.
    EditSummary { agent: usize },
    Query { agent: usize, text: String },
    Sync { a: usize, b: usize },
    /// All-pairs sync passes until a pass finds no divergence.
    SyncAll,
}

fn default_insert_fraction() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub agents: usize,
    pub seed: u64,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub corpus: CorpusSpec,
    /// Entities inserted into a shared base tree that every agent starts
    /// from.
    #[serde(default)]
    pub base_entities: usize,
    #[serde(default)]
    pub edits: usize,
    #[serde(default = "default_insert_fraction")]
    pub insert_fraction: f64,
    #[serde(default)]
    pub query_fraction: f64,
    #[serde(default)]
    pub conflict_rate: f64,
    /// Sync round after every this many edits; 0 syncs only at the end.
    #[serde(default)]
    pub sync_every: usize,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub strategy: SyncStrategy,
    #[serde(default)]
    pub events: Vec<Op>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: String::new(),
            agents: 2,
            seed: 0,
            tree: TreeConfig::default(),
            corpus: CorpusSpec::default(),
            base_entities: 0,
            edits: 0,
            insert_fraction: default_insert_fraction(),
            query_fraction: 0.0,
            conflict_rate: 0.0,
            sync_every: 0,
            topology: Topology::Ring,
            strategy: SyncStrategy::Partial,
            events: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.version != SCENARIO_VERSION {
            return bad(format!("unsupported scenario version {}", self.version));
        }
        if self.agents == 0 {
            return bad("at least one agent required".into());
        }
        self.tree.validate()?;
        for (name, f) in [
            ("insert_fraction", self.insert_fraction),
            ("query_fraction", self.query_fraction),
            ("conflict_rate", self.conflict_rate),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} {f} outside [0, 1]"));
            }
        }
        if self.insert_fraction + self.query_fraction > 1.0 {
            return bad("insert_fraction + query_fraction exceeds 1".into());
        }
        let schedule = self.schedule();
        for (i, op) in schedule.iter().enumerate() {
            let agents: Vec<usize> = match op {
                Op::Insert { agent, .. } | Op::EditSummary { agent } | Op::Query { agent, .. } => {
                    vec![*agent]
                }
                Op::Sync { a, b } => {
                    if a == b {
                        return bad(format!("event {i}: agent {a} cannot sync with itself"));
                    }
                    vec![*a, *b]
                }
                Op::SyncAll => vec![],
            };
            if let Some(x) = agents.iter().find(|&&x| x >= self.agents) {
                return bad(format!("event {i} references unknown agent {x}"));
            }
            if matches!(op, Op::Sync { .. } | Op::SyncAll) && self.agents < 2 {
                return bad(format!("event {i} syncs but only one agent exists"));
            }
            if let Op::Query { text, .. } = op {
                if text.trim().is_empty() {
                    return bad(format!("event {i} has an empty query"));
                }
            }
        }
        Ok(())
    }

    fn sync_round(&self) -> Vec<Op> {
        let n = self.agents;
        match self.topology {
            Topology::Ring if n == 2 => vec![Op::Sync { a: 0, b: 1 }],
            Topology::Ring => (0..n).map(|a| Op::Sync { a, b: (a + 1) % n }).collect(),
            Topology::AllPairs => (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| Op::Sync { a, b }))
                .collect(),
        }
    }

    /// The event list this scenario runs: explicit events if given,
    /// otherwise a schedule generated from the seed.
    pub fn schedule(&self) -> Vec<Op> {
        if !self.events.is_empty() {
            return self.events.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let vocab_queries = crate::netsim::corpus::Vocabulary::new(self.corpus)
            .map(|v| v.queries(self.edits.max(1), self.seed ^ 0x9e37))
            .unwrap_or_default();
        let mut next_item = self.base_entities;
        let mut out = Vec::new();
        for e in 0..self.edits {
            let agent = rng.random_range(0..self.agents);
            let roll: f64 = rng.random();
            if roll < self.insert_fraction {
                out.push(Op::Insert { agent, item: next_item });
                next_item += 1;
            } else if roll < self.insert_fraction + self.query_fraction {
                let text = vocab_queries
                    .get(e)
                    .cloned()
                    .unwrap_or_else(|| "query".into());
                out.push(Op::Query { agent, text });
            } else {
                out.push(Op::EditSummary { agent });
            }
            if self.agents > 1 && self.sync_every > 0 && (e + 1) % self.sync_every == 0 {
                out.extend(self.sync_round());
            }
        }
        if self.agents > 1 {
            out.push(Op::SyncAll);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let s = Scenario {
            agents: 3,
            seed: 5,
            edits: 20,
            conflict_rate: 0.3,
            sync_every: 5,
            ..Default::default()
        };
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn explicit_events_parse() {
        let s = Scenario::parse(
            r#"
version = 1
agents = 2
seed = 1
[[events]]
op = "insert"
agent = 0
item = 3
[[events]]
op = "sync"
a = 0
b = 1
"#,
        )
        .unwrap();
        assert_eq!(s.schedule().len(), 2);
    }

    #[test]
    fn unknown_agent_is_rejected_before_running() {
        let s = Scenario {
            events: vec![Op::EditSummary { agent: 5 }],
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::Scenario(_))));
        assert!(Scenario::parse("version = 2\nagents = 2\nseed = 0\n").is_err());
    }

    #[test]
    fn generated_schedule_is_seeded() {
        let s = Scenario {
            agents: 4,
            seed: 9,
            edits: 50,
            sync_every: 10,
            ..Default::default()
        };
        assert_eq!(s.schedule(), s.schedule());
        assert_eq!(s.schedule().last(), Some(&Op::SyncAll));
        let syncs = s.schedule().iter().filter(|o| matches!(o, Op::Sync { .. })).count();
        assert_eq!(syncs, 5 * 4);
    }
}
