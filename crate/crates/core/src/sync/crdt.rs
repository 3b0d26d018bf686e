//! Convergent merge of node versions and of whole trees.
//!
//! Every field of a node is a join-semilattice, so the node merge is
//! commutative, associative and idempotent by construction:
//!
//! * summary: a register ordered by the rank captured when the summary was
//!   written (deeper wins, then more used), then by text with the
//!   lexicographically smaller text winning;
//! * placement: a register over `(placed_at, parent, depth)`;
//! * children: set union (re-derived from parents once a tree is joined);
//! * entities: union by id, keeping the larger encoding if versions differ;
//! * usage count and last-modified stamp: maximum.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use crate::codec::encode_record;
use crate::error::{Error, Result};
use crate::tree::{ConceptNode, Entity, NodeId, SemanticTree};

/// Total order over two versions of one entity id.
fn entity_key(e: &Entity) -> (&str, &str, crate::tree::Timestamp) {
    (e.concept.as_str(), &e.explanation, e.created_at)
}

pub fn crdt_merge(a: &ConceptNode, b: &ConceptNode) -> Result<ConceptNode> {
    if a.id != b.id {
        return Err(Error::invalid(format!("cannot merge node {} with {}", a.id, b.id)));
    }
    let summary_key = |n: &ConceptNode| (n.summary_rank, Reverse(n.summary.as_str().to_owned()));
    let s = if summary_key(a) >= summary_key(b) { a } else { b };
    let placement_key = |n: &ConceptNode| (n.placed_at, n.parent, n.depth);
    let p = if placement_key(a) >= placement_key(b) { a } else { b };
    let mut entities = a.entities.clone();
    for (id, e) in &b.entities {
        match entities.get(id) {
            Some(cur) if entity_key(cur) >= entity_key(e) => {}
            _ => {
                entities.insert(*id, e.clone());
            }
        }
    }
    Ok(ConceptNode {
        id: a.id,
        summary: s.summary.clone(),
        summary_rank: s.summary_rank,
        parent: p.parent,
        placed_at: p.placed_at,
        children: a.children.union(&b.children).copied().collect(),
        entities,
        depth: p.depth,
        usage_count: a.usage_count.max(b.usage_count),
        last_modified: a.last_modified.max(b.last_modified),
    })
}

/// Counts from absorbing remote records.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AbsorbStats {
    pub adopted: usize,
    /// Records for ids held locally whose content differed.
    pub conflicts: usize,
}

impl SemanticTree {
    /// Joins remote node records into this tree, then re-derives children
    /// and depths. The tree is left unchanged if the result is not a valid
    /// forest.
    pub fn absorb(&mut self, records: impl IntoIterator<Item = ConceptNode>) -> Result<AbsorbStats> {
        let mut stats = AbsorbStats::default();
        let mut next = self.clone();
        let mut max_counter = 0;
        {
            let nodes = next.nodes_mut();
            for r in records {
                max_counter = max_counter.max(stamp_counter(&r));
                match nodes.get(&r.id) {
                    Some(cur) => {
                        if encode_record(cur) != encode_record(&r) {
                            stats.conflicts += 1;
                            let merged = crdt_merge(cur, &r)?;
                            nodes.insert(r.id, merged);
                        }
                    }
                    None => {
                        stats.adopted += 1;
                        nodes.insert(r.id, r);
                    }
                }
            }
        }
        next.normalize()?;
        next.observe(max_counter);
        *self = next;
        Ok(stats)
    }
}

fn stamp_counter(n: &ConceptNode) -> u64 {
    n.entities
        .values()
        .map(|e| e.created_at.counter)
        .chain([n.placed_at.counter, n.last_modified.counter])
        .max()
        .unwrap_or(0)
}

/// Merges a set of node versions by id, as a replica receiving all of them
/// in any order would.
pub fn join_records(
    records: impl IntoIterator<Item = ConceptNode>,
) -> Result<BTreeMap<NodeId, ConceptNode>> {
    let mut out: BTreeMap<NodeId, ConceptNode> = BTreeMap::new();
    for r in records {
        let merged = match out.get(&r.id) {
            Some(cur) => crdt_merge(cur, &r)?,
            None => r,
        };
        out.insert(merged.id, merged);
    }
    Ok(out)
}
