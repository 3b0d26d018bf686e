//! Deterministic multi-agent execution of a scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::corpus::Vocabulary;
use crate::netsim::scenario::{Op, Scenario, SyncStrategy};
use crate::oracle::SemanticOracle;
use crate::retrieval::search;
use crate::sync::{full_state_sync_baseline, merkle_hash, partial_sync, SyncOptions, SyncReport};
use crate::tree::{AgentId, NodeId, SemanticTree, TreeConfig};

/// Upper bound on all-pairs passes before a run is declared stuck.
const MAX_QUIESCENCE_PASSES: usize = 16;

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: AgentId,
    pub tree: SemanticTree,
    /// Local edits since this agent's last completed sync.
    pub pending_ops: usize,
}

/// One record per executed event (an all-pairs sync adds one per pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub step: usize,
    pub event: String,
    pub agents: Vec<usize>,
    pub entity_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub savings: Option<f64>,
    /// For summary edits: whether the target was contended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_edit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visited_nodes: Option<usize>,
    /// Wall time of the merge phase; not serialized so logs stay
    /// reproducible.
    #[serde(skip)]
    pub resolution_time: Duration,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub frames: Vec<MetricsFrame>,
    pub agents: Vec<Agent>,
    /// Hex Merkle root of each agent's final tree.
    pub digests: Vec<String>,
    pub conflict_edits: usize,
}

impl ScenarioOutcome {
    pub fn converged(&self) -> bool {
        self.digests.windows(2).all(|w| w[0] == w[1])
    }

    /// Metrics as JSON lines.
    pub fn metrics_jsonl(&self) -> String {
        self.frames
            .iter()
            .map(|f| serde_json::to_string(f).expect("frame serializes") + "\n")
            .collect()
    }

    pub fn sync_reports(&self) -> impl Iterator<Item = &SyncReport> {
        self.frames.iter().filter_map(|f| f.sync.as_ref())
    }

    pub fn total_resolution_time(&self) -> Duration {
        self.frames.iter().map(|f| f.resolution_time).sum()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds a tree from the first `n` corpus items.
pub fn build_tree(
    vocab: &Vocabulary,
    n: usize,
    config: &TreeConfig,
    agent: AgentId,
    oracle: &dyn SemanticOracle,
) -> Result<SemanticTree> {
    let mut t = SemanticTree::new(config.clone(), agent)?;
    extend_tree(&mut t, vocab, 0..n, oracle)?;
    Ok(t)
}

pub fn extend_tree(
    t: &mut SemanticTree,
    vocab: &Vocabulary,
    items: std::ops::Range<usize>,
    oracle: &dyn SemanticOracle,
) -> Result<()> {
    for i in items {
        let item = vocab.item(i);
        let e = t.make_entity(item.id(), &item.concept, &item.explanation)?;
        t.add_entity(oracle, e)?;
    }
    Ok(())
}

/// Summary text after an agent's rewrite: the original words with a
/// revision marker appended (replacing any earlier marker).
pub fn revised_summary(current: &str, agent: usize, step: usize, max_words: usize) -> String {
    let mut words: Vec<&str> = current
        .split_whitespace()
        .filter(|w| !w.starts_with("rev"))
        .collect();
    words.truncate(max_words.saturating_sub(1).max(1));
    if words.len() == max_words {
        words.pop();
    }
    let marker = format!("rev{agent}x{step}");
    let mut s = words.join(" ");
    if !s.is_empty() {
        s.push(' ');
    }
    s.push_str(&marker);
    s
}

struct Sim<'o> {
    scenario: Scenario,
    vocab: Vocabulary,
    agents: Vec<Agent>,
    oracle: &'o dyn SemanticOracle,
    rng: ChaCha8Rng,
    /// Node -> agents that rewrote it since they last synced.
    edited: BTreeMap<NodeId, BTreeSet<usize>>,
    frames: Vec<MetricsFrame>,
    conflict_edits: usize,
}

impl Sim<'_> {
    fn frame(&self, step: usize, event: &str, agents: Vec<usize>) -> MetricsFrame {
        MetricsFrame {
            step,
            event: event.into(),
            agents,
            entity_counts: self.agents.iter().map(|a| a.tree.entity_count()).collect(),
            sync: None,
            savings: None,
            conflict_edit: None,
            visited_nodes: None,
            resolution_time: Duration::ZERO,
        }
    }

    fn edit(&mut self, step: usize, agent: usize) -> Result<Option<bool>> {
        let tree = &self.agents[agent].tree;
        if tree.is_empty() {
            return Ok(None);
        }
        let contended: Vec<NodeId> = self
            .edited
            .iter()
            .filter(|(id, who)| who.iter().any(|&w| w != agent) && tree.nodes().contains_key(id))
            .map(|(id, _)| *id)
            .collect();
        let want_conflict = self.rng.random::<f64>() < self.scenario.conflict_rate;
        let (target, conflict) = if want_conflict && !contended.is_empty() {
            (contended[self.rng.random_range(0..contended.len())], true)
        } else {
            let k = self.rng.random_range(0..tree.nodes().len());
            (*tree.nodes().keys().nth(k).expect("index in range"), false)
        };
        let max_words = tree.config().max_summary_words;
        let text = revised_summary(tree.node(target)?.summary.as_str(), agent, step, max_words);
        let a = &mut self.agents[agent];
        a.tree.set_summary(target, &text)?;
        a.pending_ops += 1;
        self.edited.entry(target).or_default().insert(agent);
        if conflict {
            self.conflict_edits += 1;
        }
        Ok(Some(conflict))
    }

    fn sync_pair(&mut self, step: usize, event: &str, a: usize, b: usize) -> Result<SyncReport> {
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.agents.split_at_mut(hi);
        let (x, y) = (&mut left[lo].tree, &mut right[0].tree);
        let report = match self.scenario.strategy {
            SyncStrategy::Partial => partial_sync(x, y, self.oracle, SyncOptions::default())?,
            SyncStrategy::FullState => full_state_sync_baseline(x, y, self.oracle)?,
        };
        for i in [a, b] {
            self.agents[i].pending_ops = 0;
        }
        for who in self.edited.values_mut() {
            who.remove(&a);
            who.remove(&b);
        }
        self.edited.retain(|_, who| !who.is_empty());
        let mut f = self.frame(step, event, vec![a, b]);
        f.savings = Some(report.savings());
        f.resolution_time = report.resolution_time;
        f.sync = Some(report.clone());
        self.frames.push(f);
        Ok(report)
    }

    fn run_op(&mut self, step: usize, op: &Op) -> Result<()> {
        match op {
            Op::Insert { agent, item } => {
                let item = self.vocab.item(*item);
                let a = &mut self.agents[*agent];
                let e = a.tree.make_entity(item.id(), &item.concept, &item.explanation)?;
                a.tree.add_entity(self.oracle, e)?;
                a.pending_ops += 1;
                let f = self.frame(step, "insert", vec![*agent]);
                self.frames.push(f);
            }
            Op::EditSummary { agent } => {
                let conflict = self.edit(step, *agent)?;
                let mut f = self.frame(step, "edit", vec![*agent]);
                f.conflict_edit = conflict;
                self.frames.push(f);
            }
            Op::Query { agent, text } => {
                let t = &self.agents[*agent].tree;
                let r = search(t, self.oracle, text, t.config().delta, 10)?;
                let mut f = self.frame(step, "query", vec![*agent]);
                f.visited_nodes = Some(r.visited_nodes);
                self.frames.push(f);
            }
            Op::Sync { a, b } => {
                self.sync_pair(step, "sync", *a, *b)?;
            }
            Op::SyncAll => {
                let n = self.agents.len();
                let mut quiet = false;
                for _ in 0..MAX_QUIESCENCE_PASSES {
                    let mut diverged = false;
                    for a in 0..n {
                        for b in a + 1..n {
                            diverged |= self.sync_pair(step, "sync_all", a, b)?.diverged;
                        }
                    }
                    if !diverged {
                        quiet = true;
                        break;
                    }
                }
                if !quiet {
                    return Err(Error::Scenario(format!(
                        "no quiescence after {MAX_QUIESCENCE_PASSES} all-pairs passes"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Executes a scenario: build the shared base tree, fork it to every agent,
/// then run the schedule in order.
pub fn run_scenario(s: &Scenario, oracle: &dyn SemanticOracle) -> Result<ScenarioOutcome> {
    s.validate()?;
    let vocab = Vocabulary::new(s.corpus)?;
    let base = build_tree(&vocab, s.base_entities, &s.tree, AgentId(0), oracle)?;
    let agents = (0..s.agents)
        .map(|i| {
            let id = AgentId(i as u64 + 1);
            Agent {
                id,
                tree: base.fork(id),
                pending_ops: 0,
            }
        })
        .collect();
    let mut sim = Sim {
        scenario: s.clone(),
        vocab,
        agents,
        oracle,
        rng: ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed_cafe),
        edited: BTreeMap::new(),
        frames: Vec::new(),
        conflict_edits: 0,
    };
    for (step, op) in s.schedule().iter().enumerate() {
        sim.run_op(step, op)?;
    }
    let digests = sim
        .agents
        .iter()
        .map(|a| hex(&merkle_hash(&a.tree).root))
        .collect();
    Ok(ScenarioOutcome {
        frames: sim.frames,
        agents: sim.agents,
        digests,
        conflict_edits: sim.conflict_edits,
    })
}

/// Savings measurements for one agent count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub agents: usize,
    pub nodes: usize,
    pub divergent_nodes: usize,
    pub sync_events: usize,
    pub partial_bytes: u64,
    pub full_bytes: u64,
    pub min_savings: f64,
    pub mean_savings: f64,
    /// Final state equals the one reached by full-state replication.
    pub matches_full_state: bool,
}

/// Forks a tree of `base_entities` entities to `agents` replicas, rewrites
/// `divergence` of its nodes (split round-robin across agents) and runs
/// all-pairs partial sync to quiescence. Every event is compared with the
/// bytes of a full-state exchange between the same two replicas.
pub fn bandwidth_experiment(
    agents: usize,
    base_entities: usize,
    divergence: f64,
    seed: u64,
    config: &TreeConfig,
    oracle: &dyn SemanticOracle,
) -> Result<(BandwidthRow, Vec<SyncReport>)> {
    if agents < 2 {
        return Err(Error::invalid("bandwidth experiment needs two agents"));
    }
    let vocab = Vocabulary::new(crate::netsim::corpus::CorpusSpec {
        seed,
        ..Default::default()
    })?;
    let base = build_tree(&vocab, base_entities, config, AgentId(0), oracle)?;
    let nodes = base.nodes().len();
    let divergent = ((nodes as f64 * divergence).round() as usize).max(1);
    let mut ids: Vec<NodeId> = base.nodes().keys().copied().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut replicas: Vec<SemanticTree> = (0..agents)
        .map(|i| base.fork(AgentId(i as u64 + 1)))
        .collect();
    for (k, id) in ids.iter().take(divergent).enumerate() {
        let a = k % agents;
        let t = &mut replicas[a];
        let text = revised_summary(
            t.node(*id)?.summary.as_str(),
            a,
            k,
            config.max_summary_words,
        );
        t.set_summary(*id, &text)?;
    }
    let mut full = replicas.clone();
    let run = |trees: &mut Vec<SemanticTree>, partial: bool| -> Result<Vec<SyncReport>> {
        let mut reports = Vec::new();
        for _ in 0..MAX_QUIESCENCE_PASSES {
            let mut diverged = false;
            for a in 0..agents {
                for b in a + 1..agents {
                    let (l, r) = trees.split_at_mut(b);
                    let rep = if partial {
                        partial_sync(&mut l[a], &mut r[0], oracle, SyncOptions::default())?
                    } else {
                        full_state_sync_baseline(&mut l[a], &mut r[0], oracle)?
                    };
                    diverged |= rep.diverged;
                    reports.push(rep);
                }
            }
            if !diverged {
                return Ok(reports);
            }
        }
        Err(Error::Scenario("bandwidth experiment did not quiesce".into()))
    };
    let reports = run(&mut replicas, true)?;
    run(&mut full, false)?;
    let matches_full_state = crate::codec::encode_nodes(&replicas[0])
        == crate::codec::encode_nodes(&full[0]);
    let savings: Vec<f64> = reports.iter().map(|r| r.savings()).collect();
    let row = BandwidthRow {
        agents,
        nodes,
        divergent_nodes: divergent,
        sync_events: reports.len(),
        partial_bytes: reports.iter().map(|r| r.total_bytes()).sum(),
        full_bytes: reports.iter().map(|r| r.full_state_bytes).sum(),
        min_savings: savings.iter().copied().fold(f64::INFINITY, f64::min),
        mean_savings: savings.iter().sum::<f64>() / savings.len() as f64,
        matches_full_state,
    };
    Ok((row, reports))
}
