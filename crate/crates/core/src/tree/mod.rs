//! The rooted semantic tree and its node records.

mod insert;
mod model;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::oracle::{SemanticOracle, SummaryText, TokenFrequencies, DEFAULT_MAX_SUMMARY_WORDS};

pub use insert::{InsertReport, MergeReport, MergeStep, StampMode};
pub use model::{depth_estimate, predicted_insert_calls};
pub use validate::{validate, ValidationReport};

macro_rules! id_type {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u128);

        impl $name {
            pub fn to_bytes(self) -> [u8; 16] {
                self.0.to_be_bytes()
            }

            pub fn from_bytes(b: [u8; 16]) -> Self {
                Self(u128::from_be_bytes(b))
            }

            pub fn parse_hex(s: &str) -> Option<Self> {
                u128::from_str_radix(s, 16).ok().map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:032x}", self.0)
            }
        }
    };
}

id_type!(NodeId, "Stable 128-bit node identity, shared across replicas.");
id_type!(EntityId, "Stable 128-bit entity identity.");

/// First 16 bytes of SHA-256 over the given parts, as an id.
pub(crate) fn derive_id(domain: &str, parts: &[&[u8]]) -> u128 {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut b = [0u8; 16];
    b.copy_from_slice(&out[..16]);
    u128::from_be_bytes(b)
}

impl EntityId {
    /// Content-derived id for a concept/explanation pair.
    pub fn from_content(concept: &str, explanation: &str) -> Self {
        Self(derive_id(
            "shimi/entity",
            &[concept.as_bytes(), explanation.as_bytes()],
        ))
    }

    /// Id derived from an external key.
    pub fn from_external(key: &str) -> Self {
        Self(derive_id("shimi/entity-ext", &[key.as_bytes()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u64);

impl AgentId {
    /// Author of structural repairs that every replica derives identically.
    pub const REPAIR: AgentId = AgentId(u64::MAX);
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

/// Logical timestamp: a per-agent Lamport counter paired with the agent id.
/// Ordered by counter first, then agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    pub counter: u64,
    pub agent: u64,
}

impl Timestamp {
    pub fn new(counter: u64, agent: AgentId) -> Self {
        Self {
            counter,
            agent: agent.0,
        }
    }
}

/// A stored knowledge item: a concept with its explanation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub concept: SummaryText,
    pub explanation: String,
    pub created_at: Timestamp,
}

impl Entity {
    pub fn new(
        id: EntityId,
        concept: SummaryText,
        explanation: impl Into<String>,
        created_at: Timestamp,
    ) -> Result<Self> {
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(Error::invalid("entity explanation is empty"));
        }
        Ok(Self {
            id,
            concept,
            explanation,
            created_at,
        })
    }

    /// Same knowledge content, ignoring when it was recorded.
    pub fn same_content(&self, other: &Entity) -> bool {
        self.concept == other.concept && self.explanation == other.explanation
    }
}

/// Key used to settle conflicting summaries for one node: deeper wins, then
/// more used. Captured when the summary is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SummaryRank {
    pub depth: u32,
    pub usage: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode {
    pub id: NodeId,
    pub summary: SummaryText,
    pub summary_rank: SummaryRank,
    pub parent: Option<NodeId>,
    /// When this node was last (re)attached under `parent`.
    pub placed_at: Timestamp,
    pub children: BTreeSet<NodeId>,
    pub entities: BTreeMap<EntityId, Entity>,
    pub depth: u32,
    pub usage_count: u64,
    pub last_modified: Timestamp,
}

impl ConceptNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    /// Nodes created to hold entities never gain children.
    pub fn holds_entities(&self) -> bool {
        !self.entities.is_empty()
    }
}

/// Immutable tree parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// Maximum number of root buckets.
    #[serde(alias = "R")]
    pub max_roots: usize,
    /// Maximum children per node.
    #[serde(alias = "T")]
    pub branching: usize,
    /// Maximum abstraction chain length.
    #[serde(alias = "L")]
    pub levels: usize,
    /// Similarity threshold for matching and retrieval.
    pub delta: f64,
    /// Word-count compression ratio between abstraction levels.
    pub gamma: f64,
    #[serde(default = "default_max_words")]
    pub max_summary_words: usize,
}

fn default_max_words() -> usize {
    DEFAULT_MAX_SUMMARY_WORDS
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_roots: 5,
            branching: 4,
            levels: 3,
            delta: 0.3,
            gamma: 0.5,
            max_summary_words: DEFAULT_MAX_SUMMARY_WORDS,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_roots == 0 {
            return Err(Error::invalid("max_roots must be positive"));
        }
        if self.branching < 2 {
            return Err(Error::invalid("branching must be at least 2"));
        }
        if self.levels == 0 {
            return Err(Error::invalid("levels must be positive"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta {} outside [0, 1]", self.delta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.max_summary_words == 0 {
            return Err(Error::invalid("max_summary_words must be positive"));
        }
        Ok(())
    }

    /// Whether two configs may exchange state.
    pub fn compatible(&self, other: &TreeConfig) -> bool {
        self.max_roots == other.max_roots
            && self.branching == other.branching
            && self.levels == other.levels
            && self.delta.to_bits() == other.delta.to_bits()
            && self.gamma.to_bits() == other.gamma.to_bits()
            && self.max_summary_words == other.max_summary_words
    }
}

/// A single agent's memory tree.
#[derive(Debug, Clone)]
pub struct SemanticTree {
    config: TreeConfig,
    agent: AgentId,
    clock: u64,
    nodes: BTreeMap<NodeId, ConceptNode>,
    roots: BTreeSet<NodeId>,
    placements: BTreeMap<EntityId, BTreeSet<NodeId>>,
}

impl SemanticTree {
    pub fn new(config: TreeConfig, agent: AgentId) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            agent,
            clock: 0,
            nodes: BTreeMap::new(),
            roots: BTreeSet::new(),
            placements: BTreeMap::new(),
        })
    }

    /// Rebuilds a tree from decoded node records; derived indices are
    /// recomputed and the structure is normalized.
    pub fn from_parts(
        config: TreeConfig,
        agent: AgentId,
        clock: u64,
        nodes: impl IntoIterator<Item = ConceptNode>,
    ) -> Result<Self> {
        let mut tree = Self::new(config, agent)?;
        tree.clock = clock;
        for n in nodes {
            if tree.nodes.insert(n.id, n).is_some() {
                return Err(Error::corrupt("duplicate node id"));
            }
        }
        tree.rebuild_indices();
        Ok(tree)
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn agent(&self) -> AgentId {
        self.agent
    }

    /// A copy of this tree owned by another agent.
    pub fn fork(&self, agent: AgentId) -> Self {
        let mut t = self.clone();
        t.agent = agent;
        t
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, ConceptNode> {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&ConceptNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut ConceptNode> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn roots(&self) -> &BTreeSet<NodeId> {
        &self.roots
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct entities stored.
    pub fn entity_count(&self) -> usize {
        self.placements.len()
    }

    /// Total entity placements; an entity may sit at several leaves.
    pub fn placement_count(&self) -> usize {
        self.placements.values().map(BTreeSet::len).sum()
    }

    pub fn placements_of(&self, id: EntityId) -> Option<&BTreeSet<NodeId>> {
        self.placements.get(&id)
    }

    /// Distinct entities with the leaf that holds each one (smallest leaf id
    /// when placed more than once).
    pub fn entities(&self) -> impl Iterator<Item = (&Entity, &ConceptNode)> {
        self.placements.iter().map(move |(eid, leaves)| {
            let leaf = &self.nodes[leaves.iter().next().expect("placement set non-empty")];
            (&leaf.entities[eid], leaf)
        })
    }

    /// Longest root-to-node distance (roots are at depth 0).
    pub fn max_depth(&self) -> u32 {
        self.nodes.values().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Ids of `root` and all its descendants, parents before children.
    pub fn subtree_ids(&self, root: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        if !self.nodes.contains_key(&root) {
            return out;
        }
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some(n) = self.nodes.get(&id) {
                stack.extend(n.children.iter().rev().copied());
            }
        }
        out
    }

    /// Summaries from a root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<&SummaryText>> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.node(c)?;
            path.push(&n.summary);
            cur = n.parent;
            if path.len() > self.nodes.len() {
                return Err(Error::Structure("parent cycle".into()));
            }
        }
        path.reverse();
        Ok(path)
    }

    /// Advances the local Lamport clock and returns a fresh stamp.
    pub fn tick(&mut self) -> Timestamp {
        self.clock += 1;
        Timestamp::new(self.clock, self.agent)
    }

    /// Moves the clock past a counter seen on another replica.
    pub fn observe(&mut self, counter: u64) {
        self.clock = self.clock.max(counter);
    }

    /// Builds an entity stamped with this tree's clock.
    pub fn make_entity(
        &mut self,
        id: EntityId,
        concept: &str,
        explanation: &str,
    ) -> Result<Entity> {
        let concept = SummaryText::new(concept, self.config.max_summary_words)?;
        let ts = self.tick();
        Entity::new(id, concept, explanation, ts)
    }

    pub(crate) fn fresh_node_id(&mut self) -> (NodeId, Timestamp) {
        let ts = self.tick();
        let id = derive_id(
            "shimi/node",
            &[&ts.agent.to_be_bytes(), &ts.counter.to_be_bytes()],
        );
        (NodeId(id), ts)
    }

    /// Token frequencies over the concepts of all stored entities.
    pub fn token_frequencies(&self, oracle: &dyn SemanticOracle) -> TokenFrequencies {
        let mut f = TokenFrequencies::new();
        for (e, _) in self.entities() {
            f.add_tokens(oracle.tokens(e.concept.as_str()));
        }
        f
    }

    /// Replaces a node's summary; the conflict key is captured from the
    /// node's current depth and usage.
    pub fn set_summary(&mut self, id: NodeId, text: &str) -> Result<()> {
        let summary = SummaryText::new(text, self.config.max_summary_words)?;
        let ts = self.tick();
        let n = self.node_mut(id)?;
        n.summary_rank = SummaryRank {
            depth: n.depth,
            usage: n.usage_count,
        };
        n.summary = summary;
        n.last_modified = ts;
        Ok(())
    }

    /// Counts a retrieval hit on each given node.
    pub fn record_usage<'a>(&mut self, ids: impl IntoIterator<Item = &'a NodeId>) -> Result<()> {
        let ids: BTreeSet<NodeId> = ids.into_iter().copied().collect();
        if ids.is_empty() {
            return Ok(());
        }
        let ts = self.tick();
        for id in ids {
            let n = self.node_mut(id)?;
            n.usage_count += 1;
            n.last_modified = ts;
        }
        Ok(())
    }

    /// Recomputes roots and entity placements from the node map.
    pub(crate) fn rebuild_indices(&mut self) {
        self.roots = self
            .nodes
            .values()
            .filter(|n| n.parent.is_none())
            .map(|n| n.id)
            .collect();
        self.placements.clear();
        for n in self.nodes.values() {
            for eid in n.entities.keys() {
                self.placements.entry(*eid).or_default().insert(n.id);
            }
        }
    }

    /// Re-derives children sets from parent pointers and depths from the
    /// root distance. Fails on dangling parents or cycles.
    pub(crate) fn normalize(&mut self) -> Result<()> {
        let mut children: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.nodes.keys().map(|&id| (id, BTreeSet::new())).collect();
        for n in self.nodes.values() {
            if let Some(p) = n.parent {
                children
                    .get_mut(&p)
                    .ok_or_else(|| {
                        Error::Structure(format!("node {} has unknown parent {p}", n.id))
                    })?
                    .insert(n.id);
            }
        }
        for (id, kids) in children {
            self.nodes.get_mut(&id).expect("key from map").children = kids;
        }
        self.rebuild_indices();
        let mut reached = 0usize;
        let mut frontier: Vec<(NodeId, u32)> = self.roots.iter().map(|&r| (r, 0)).collect();
        while let Some((id, depth)) = frontier.pop() {
            reached += 1;
            let n = self.nodes.get_mut(&id).expect("reachable ids exist");
            n.depth = depth;
            frontier.extend(n.children.iter().map(|&c| (c, depth + 1)));
        }
        if reached != self.nodes.len() {
            return Err(Error::Structure(format!(
                "{} nodes unreachable from roots",
                self.nodes.len() - reached
            )));
        }
        Ok(())
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut BTreeMap<NodeId, ConceptNode> {
        &mut self.nodes
    }

    /// Largest counter appearing in any stamp of any node.
    pub fn max_stamp_counter(&self) -> u64 {
        self.nodes
            .values()
            .flat_map(|n| {
                [n.placed_at.counter, n.last_modified.counter]
                    .into_iter()
                    .chain(n.entities.values().map(|e| e.created_at.counter))
            })
            .max()
            .unwrap_or(0)
    }
}
