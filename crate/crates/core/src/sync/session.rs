//! Pairwise anti-entropy sessions: partial sync and the full-state baseline.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codec::{encode_nodes, encode_record, encode_snapshot};
use crate::error::{Error, Result};
use crate::oracle::SemanticOracle;
use crate::sync::bloom::{bloom_for_subtree, reconciliation_key, BloomSummary, DEFAULT_FPR};
use crate::sync::merkle::{compare_level, level_entries, merkle_hash, DigestTable};
use crate::sync::wire::{self, Frame};
use crate::tree::{ConceptNode, NodeId, SemanticTree, StampMode};

pub const DEFAULT_MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncOptions {
    pub max_rounds: usize,
    pub target_fpr: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            target_fpr: DEFAULT_FPR,
        }
    }
}

/// Accounting for one session, seen from the local side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub diverged: bool,
    /// Distinct nodes inside divergent subtrees on either side.
    pub subtree_size: usize,
    pub divergence_roots: usize,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Bytes both full snapshots would have taken at session start.
    pub full_state_bytes: u64,
    pub records_sent: usize,
    pub records_received: usize,
    /// Ids held by both sides with differing records that were merged.
    pub conflicts_resolved: usize,
    /// Overload merges applied after convergence.
    pub repairs: usize,
    pub rounds: usize,
    /// Compute time of the merge phase; excluded from serialized reports.
    #[serde(skip)]
    pub resolution_time: Duration,
}

impl SyncReport {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    /// Fraction of the full-state transfer avoided.
    pub fn savings(&self) -> f64 {
        if self.full_state_bytes == 0 {
            return 0.0;
        }
        1.0 - self.total_bytes() as f64 / self.full_state_bytes as f64
    }
}

/// Byte size of the root-hash exchange that every session starts with.
pub const ROOT_EXCHANGE_BYTES: u64 = (wire::FRAME_HEADER_LEN + 32) as u64;

struct Channel<'r> {
    report: &'r mut SyncReport,
}

impl Channel<'_> {
    /// Encodes a frame from one side and decodes it on the other, counting
    /// the encoded bytes.
    fn send(&mut self, from_local: bool, f: Frame) -> Result<Frame> {
        let bytes = f.encode();
        if from_local {
            self.report.bytes_sent += bytes.len() as u64;
        } else {
            self.report.bytes_received += bytes.len() as u64;
        }
        Frame::decode(&bytes)
    }
}

fn check_configs(a: &SemanticTree, b: &SemanticTree) -> Result<()> {
    if !a.config().compatible(b.config()) {
        return Err(Error::ConfigMismatch(format!(
            "{:?} vs {:?}",
            a.config(),
            b.config()
        )));
    }
    Ok(())
}

/// Records of nodes under `root` whose keys the peer filter lacks, plus
/// their ancestors up to `root` so every record's parent is resolvable.
pub fn compute_delta<'t>(
    tree: &'t SemanticTree,
    table: &DigestTable,
    root: NodeId,
    peer: &BloomSummary,
) -> Vec<&'t ConceptNode> {
    if !tree.nodes().contains_key(&root) {
        return Vec::new();
    }
    let mut chosen: BTreeSet<NodeId> = BTreeSet::new();
    for id in tree.subtree_ids(root) {
        let key = reconciliation_key(peer.salt(), id, &table.entries[&id].record);
        if peer.contains(&key) {
            continue;
        }
        let mut cur = Some(id);
        while let Some(c) = cur {
            if !chosen.insert(c) || c == root {
                break;
            }
            cur = tree.nodes()[&c].parent;
        }
    }
    chosen.iter().map(|id| &tree.nodes()[id]).collect()
}

/// Reconciles two replicas by exchanging root digests, descending to the
/// divergent subtrees, swapping Bloom summaries of those subtrees and then
/// the records each side is missing. Rounds repeat with fresh salts until
/// the root digests agree. Overloads created by the union are then repaired
/// identically on both sides.
pub fn partial_sync(
    local: &mut SemanticTree,
    remote: &mut SemanticTree,
    oracle: &dyn SemanticOracle,
    opts: SyncOptions,
) -> Result<SyncReport> {
    check_configs(local, remote)?;
    let mut report = SyncReport {
        full_state_bytes: (encode_snapshot(local).len() + encode_snapshot(remote).len()) as u64,
        ..Default::default()
    };
    let max_words = local.config().max_summary_words;
    let mut touched: BTreeSet<NodeId> = BTreeSet::new();
    let mut conflicted: BTreeSet<NodeId> = BTreeSet::new();
    let mut converged = false;
    for round in 0..opts.max_rounds {
        let ta = merkle_hash(local);
        let tb = merkle_hash(remote);
        let mut ch = Channel { report: &mut report };
        let ra = wire::parse_root_hash(&ch.send(true, wire::root_hash(&ta.root))?)?;
        let rb = wire::parse_root_hash(&ch.send(false, wire::root_hash(&tb.root))?)?;
        if ra == rb {
            converged = true;
            break;
        }
        report.diverged = true;
        report.rounds = round + 1;
        let mut ch = Channel { report: &mut report };

        // Divergence discovery, one tree level per exchange.
        let mut roots: BTreeSet<NodeId> = BTreeSet::new();
        let mut parents: Option<BTreeSet<NodeId>> = None;
        loop {
            let ea = wire::parse_diff_request(
                &ch.send(true, wire::diff_request(&level_entries(&ta, parents.as_ref())))?,
            )?;
            let eb = wire::parse_diff_request(
                &ch.send(false, wire::diff_request(&level_entries(&tb, parents.as_ref())))?,
            )?;
            let d = compare_level(&ea, &eb);
            roots.extend(d.divergent);
            if d.expand.is_empty() {
                break;
            }
            parents = Some(d.expand);
        }

        // Filters and deltas per divergent subtree, both directions.
        let salt = round as u64;
        let mut to_remote: Vec<ConceptNode> = Vec::new();
        let mut to_local: Vec<ConceptNode> = Vec::new();
        for &r in &roots {
            for t in [&*local, &*remote] {
                if t.nodes().contains_key(&r) {
                    touched.extend(t.subtree_ids(r));
                }
            }
            let ba = bloom_for_subtree(local, &ta, r, opts.target_fpr, salt)?;
            let bb = bloom_for_subtree(remote, &tb, r, opts.target_fpr, salt)?;
            let (_, ba) = wire::parse_bloom(&ch.send(true, wire::bloom(r, &ba))?)?;
            let (_, bb) = wire::parse_bloom(&ch.send(false, wire::bloom(r, &bb))?)?;
            let da = compute_delta(local, &ta, r, &bb);
            let db = compute_delta(remote, &tb, r, &ba);
            let (_, da) = wire::parse_delta(&ch.send(true, wire::delta(r, &da))?, max_words)?;
            let (_, db) = wire::parse_delta(&ch.send(false, wire::delta(r, &db))?, max_words)?;
            to_remote.extend(da);
            to_local.extend(db);
        }
        ch.send(true, wire::done())?;
        ch.send(false, wire::done())?;
        report.divergence_roots += roots.len();
        report.records_sent += to_remote.len();
        report.records_received += to_local.len();
        for rec in to_remote.iter().chain(&to_local) {
            let held_a = local.nodes().get(&rec.id);
            let held_b = remote.nodes().get(&rec.id);
            if let (Some(a), Some(b)) = (held_a, held_b) {
                if encode_record(a) != encode_record(b) {
                    conflicted.insert(rec.id);
                }
            }
        }

        let start = Instant::now();
        local.absorb(to_local)?;
        remote.absorb(to_remote)?;
        report.resolution_time += start.elapsed();
    }
    report.subtree_size = touched.len();
    report.conflicts_resolved = conflicted.len();
    if !converged {
        let rounds = report.rounds;
        return Err(Error::NonConvergence {
            rounds,
            report: Box::new(report),
        });
    }
    if report.diverged {
        let start = Instant::now();
        report.repairs = repair_both(local, remote, oracle)?;
        report.resolution_time += start.elapsed();
    }
    Ok(report)
}

/// Applies post-merge overload repairs to two replicas holding identical
/// node state; both end up identical again.
fn repair_both(
    a: &mut SemanticTree,
    b: &mut SemanticTree,
    oracle: &dyn SemanticOracle,
) -> Result<usize> {
    let steps: usize = a
        .repair_overloads(oracle, StampMode::Derived)?
        .iter()
        .map(|r| r.steps.len())
        .sum();
    b.repair_overloads(oracle, StampMode::Derived)?;
    if encode_nodes(a) != encode_nodes(b) {
        return Err(Error::Structure(
            "replicas diverged while repairing overloads".into(),
        ));
    }
    Ok(steps)
}

/// Replicates by exchanging both complete snapshots and joining every
/// record. Converges to the same state as [`partial_sync`].
pub fn full_state_sync_baseline(
    a: &mut SemanticTree,
    b: &mut SemanticTree,
    oracle: &dyn SemanticOracle,
) -> Result<SyncReport> {
    check_configs(a, b)?;
    let sa = encode_snapshot(a);
    let sb = encode_snapshot(b);
    let mut report = SyncReport {
        bytes_sent: sa.len() as u64,
        bytes_received: sb.len() as u64,
        full_state_bytes: (sa.len() + sb.len()) as u64,
        rounds: 1,
        ..Default::default()
    };
    let ta = merkle_hash(a);
    let tb = merkle_hash(b);
    report.diverged = ta.root != tb.root;
    if !report.diverged {
        return Ok(report);
    }
    let ra = crate::codec::decode_snapshot(&sa)?;
    let rb = crate::codec::decode_snapshot(&sb)?;
    report.conflicts_resolved = ta
        .entries
        .iter()
        .filter(|(id, e)| tb.entries.get(id).is_some_and(|f| f.record != e.record))
        .count();
    report.subtree_size = ta
        .entries
        .iter()
        .filter(|(id, e)| tb.entries.get(id) != Some(e))
        .count()
        + tb.entries.keys().filter(|id| !ta.entries.contains_key(id)).count();
    report.records_sent = ra.nodes().len();
    report.records_received = rb.nodes().len();
    let start = Instant::now();
    a.absorb(rb.nodes().values().cloned())?;
    b.absorb(ra.nodes().values().cloned())?;
    report.repairs = repair_both(a, b, oracle)?;
    report.resolution_time = start.elapsed();
    Ok(report)
}
