//! Helpers shared by the integration tests: an independent reimplementation
//! of the token-set similarity, a brute-force retrieval oracle and seeded
//! generators for trees and nodes.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shimi_core::oracle::{SummaryText, DEFAULT_STOPWORDS};
use shimi_core::tree::{ConceptNode, Entity, EntityId, NodeId, SummaryRank, Timestamp};
use shimi_core::{AgentId, SemanticTree, TokenOracle, TreeConfig};

/// Words used by random corpora; small enough that concepts overlap often.
pub const POOL: &[&str] = &[
    "grid", "storage", "demand", "solar", "loan", "risk", "credit", "fraud", "sensor", "drift",
    "ledger", "audit",
];

fn stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Normalized token set, written independently of the library.
pub fn token_set(text: &str) -> BTreeSet<String> {
    let stop = stopwords();
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .filter(|w| !stop.contains(*w))
        .map(str::to_owned)
        .collect()
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (x, y) = (token_set(a), token_set(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 0.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// Entities reachable from a root through nodes that all pass `delta`,
/// collected at leaves.
pub fn brute_force_retrieve(tree: &SemanticTree, q: &str, delta: f64) -> BTreeSet<EntityId> {
    let nodes = tree.nodes();
    let mut out = BTreeSet::new();
    for leaf in nodes.values().filter(|n| n.children.is_empty()) {
        let mut chain_ok = true;
        let mut cur = Some(leaf.id);
        while let Some(id) = cur {
            let n = &nodes[&id];
            if jaccard(q, n.summary.as_str()) < delta {
                chain_ok = false;
                break;
            }
            cur = n.parent;
        }
        if chain_ok {
            out.extend(leaf.entities.keys().copied());
        }
    }
    out
}

pub fn random_phrase(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut words: Vec<&str> = POOL.choose_multiple(rng, n).copied().collect();
    words.sort_by_key(|w| POOL.iter().position(|p| p == w));
    words.join(" ")
}

/// A tree of up to `max_entities` entities with overlapping vocabulary.
pub fn random_tree(seed: u64, max_entities: usize, oracle: &TokenOracle) -> SemanticTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TreeConfig {
        max_roots: rng.random_range(2..=5),
        branching: rng.random_range(2..=4),
        ..TreeConfig::default()
    };
    let mut t = SemanticTree::new(cfg, AgentId(1)).unwrap();
    let n = rng.random_range(1..=max_entities);
    for i in 0..n {
        let concept = random_phrase(&mut rng, 1, 4);
        let explanation = format!("{concept} {} note{i}", random_phrase(&mut rng, 0, 2));
        let e = t
            .make_entity(EntityId::from_content(&concept, &explanation), &concept, &explanation)
            .unwrap();
        t.add_entity(oracle, e).unwrap();
    }
    t
}

fn entity(rng: &mut ChaCha8Rng, id: u128) -> Entity {
    let concept = random_phrase(rng, 1, 3);
    let explanation = format!("{concept} v{}", rng.random_range(0..2));
    Entity::new(
        EntityId(id),
        SummaryText::new(concept, 20).unwrap(),
        explanation,
        Timestamp::new(rng.random_range(0..4), AgentId(rng.random_range(1..3))),
    )
    .unwrap()
}

/// Random version of node 42, drawn from small domains so that field
/// collisions (equal ranks, equal stamps, same entity ids) are common.
pub fn random_node(rng: &mut ChaCha8Rng) -> ConceptNode {
    let children: BTreeSet<NodeId> = (0..rng.random_range(0..4))
        .map(|_| NodeId(rng.random_range(100..106)))
        .collect();
    let entities: BTreeMap<EntityId, Entity> = (0..rng.random_range(0..3))
        .map(|_| {
            let id = rng.random_range(1..5);
            (EntityId(id), entity(rng, id))
        })
        .collect();
    let depth = rng.random_range(0..3);
    ConceptNode {
        id: NodeId(42),
        summary: SummaryText::new(random_phrase(rng, 1, 3), 20).unwrap(),
        summary_rank: SummaryRank {
            depth: rng.random_range(0..3),
            usage: rng.random_range(0..3),
        },
        parent: [None, Some(NodeId(7)), Some(NodeId(8))][rng.random_range(0..3)],
        placed_at: Timestamp::new(rng.random_range(0..3), AgentId(rng.random_range(1..3))),
        children,
        entities,
        depth,
        usage_count: rng.random_range(0..5),
        last_modified: Timestamp::new(rng.random_range(0..5), AgentId(rng.random_range(1..3))),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Merkle root of a tree with no nodes: SHA-256 of the empty string.
pub const EMPTY_TREE_DIGEST: &str =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
