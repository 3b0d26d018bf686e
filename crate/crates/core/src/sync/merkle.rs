//! Bottom-up content digests over canonical node records.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest as _, Sha256};

use crate::codec::encode_record;
use crate::tree::{NodeId, SemanticTree};

pub type Digest = [u8; 32];

pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Digests for one node: its own record, and the record plus every
/// descendant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigestEntry {
    pub record: Digest,
    pub subtree: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestTable {
    pub root: Digest,
    pub entries: BTreeMap<NodeId, DigestEntry>,
    pub roots: BTreeSet<NodeId>,
    pub children: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl DigestTable {
    pub fn get(&self, id: NodeId) -> Option<&DigestEntry> {
        self.entries.get(&id)
    }
}

/// Hashes every node. A subtree digest covers the node's record digest
/// followed by its children's subtree digests in child-id order; the root
/// digest hashes the sorted root subtree digests.
pub fn merkle_hash(tree: &SemanticTree) -> DigestTable {
    let nodes = tree.nodes();
    let mut entries: BTreeMap<NodeId, DigestEntry> = BTreeMap::new();
    // Post-order without recursion: push each node twice.
    let mut stack: Vec<(NodeId, bool)> = tree.roots().iter().rev().map(|&r| (r, false)).collect();
    while let Some((id, expanded)) = stack.pop() {
        let n = &nodes[&id];
        if !expanded {
            stack.push((id, true));
            stack.extend(n.children.iter().rev().map(|&c| (c, false)));
            continue;
        }
        let record = sha256(&[&encode_record(n)]);
        let mut h = Sha256::new();
        h.update(record);
        for c in &n.children {
            h.update(entries[c].subtree);
        }
        entries.insert(
            id,
            DigestEntry {
                record,
                subtree: h.finalize().into(),
            },
        );
    }
    let mut root_digests: Vec<Digest> = tree.roots().iter().map(|r| entries[r].subtree).collect();
    root_digests.sort_unstable();
    let flat: Vec<&[u8]> = root_digests.iter().map(|d| d.as_slice()).collect();
    DigestTable {
        root: sha256(&flat),
        entries,
        roots: tree.roots().clone(),
        children: nodes.iter().map(|(id, n)| (*id, n.children.clone())).collect(),
    }
}

/// A node summary as exchanged during divergence discovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireEntry {
    pub id: NodeId,
    pub entry: DigestEntry,
}

/// Result of comparing one level of entries from both sides.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LevelDiff {
    /// Ids whose record differs or that only one side has.
    pub divergent: BTreeSet<NodeId>,
    /// Ids with equal records but different descendants.
    pub expand: BTreeSet<NodeId>,
}

pub fn compare_level(local: &[WireEntry], remote: &[WireEntry]) -> LevelDiff {
    let a: BTreeMap<NodeId, DigestEntry> = local.iter().map(|w| (w.id, w.entry)).collect();
    let b: BTreeMap<NodeId, DigestEntry> = remote.iter().map(|w| (w.id, w.entry)).collect();
    let mut out = LevelDiff::default();
    for id in a.keys().chain(b.keys()) {
        match (a.get(id), b.get(id)) {
            (Some(x), Some(y)) if x.record != y.record => {
                out.divergent.insert(*id);
            }
            (Some(x), Some(y)) if x.subtree != y.subtree => {
                out.expand.insert(*id);
            }
            (Some(_), Some(_)) => {}
            _ => {
                out.divergent.insert(*id);
            }
        }
    }
    out
}

/// Entries for the roots (`parents = None`) or for the children of the
/// given parents that exist in this table.
pub fn level_entries(table: &DigestTable, parents: Option<&BTreeSet<NodeId>>) -> Vec<WireEntry> {
    let ids: Vec<NodeId> = match parents {
        None => table.roots.iter().copied().collect(),
        Some(ps) => ps
            .iter()
            .filter_map(|p| table.children.get(p))
            .flatten()
            .copied()
            .collect(),
    };
    ids.into_iter()
        .map(|id| WireEntry {
            id,
            entry: table.entries[&id],
        })
        .collect()
}

/// Smallest set of subtree roots covering every difference between two
/// digest tables, found by walking down from the roots level by level.
pub fn find_diff(local: &DigestTable, remote: &DigestTable) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    if local.root == remote.root {
        return out;
    }
    let mut parents: Option<BTreeSet<NodeId>> = None;
    loop {
        let d = compare_level(
            &level_entries(local, parents.as_ref()),
            &level_entries(remote, parents.as_ref()),
        );
        out.extend(d.divergent);
        if d.expand.is_empty() {
            break;
        }
        parents = Some(d.expand);
    }
    out
}
