//! Full-structure invariant checker.

use std::collections::{BTreeMap, BTreeSet};

use super::{NodeId, SemanticTree};
use crate::error::{Error, Result};
use crate::oracle::{chain_satisfies_gamma, MergeOutcome, SemanticOracle};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub nodes: usize,
    pub entities: usize,
    pub placements: usize,
    pub max_depth: u32,
    /// Overloaded parents (`None` = root list) where every pair refuses to merge.
    pub tolerated_overloads: Vec<Option<NodeId>>,
}

/// Checks every structural invariant of `tree`.
///
/// Branching overloads are accepted only when the oracle refuses every
/// candidate pair, which is the one case merging leaves in place.
pub fn validate(tree: &SemanticTree, oracle: &dyn SemanticOracle) -> Result<ValidationReport> {
    let mut errs: Vec<String> = Vec::new();
    let cfg = tree.config();
    let nodes = tree.nodes();

    for (id, n) in nodes {
        if *id != n.id {
            errs.push(format!("node keyed {id} carries id {}", n.id));
        }
        if n.summary.word_count() > cfg.max_summary_words {
            errs.push(format!("node {id} summary exceeds word limit"));
        }
        match n.parent {
            Some(p) => match nodes.get(&p) {
                Some(pn) if pn.children.contains(id) => {}
                Some(_) => errs.push(format!("parent {p} does not list child {id}")),
                None => errs.push(format!("node {id} has unknown parent {p}")),
            },
            None => {
                if !tree.roots().contains(id) {
                    errs.push(format!("parentless node {id} missing from roots"));
                }
            }
        }
        for c in &n.children {
            match nodes.get(c) {
                Some(cn) if cn.parent == Some(*id) => {}
                Some(_) => errs.push(format!("child {c} of {id} points elsewhere")),
                None => errs.push(format!("node {id} has unknown child {c}")),
            }
        }
        if !n.entities.is_empty() && !n.children.is_empty() {
            errs.push(format!("interior node {id} holds entities"));
        }
        if n.is_root() && !n.entities.is_empty() {
            errs.push(format!("root {id} holds entities"));
        }
        for (eid, e) in &n.entities {
            if *eid != e.id {
                errs.push(format!("entity keyed {eid} carries id {}", e.id));
            }
        }
    }
    for r in tree.roots() {
        if nodes.get(r).is_none_or(|n| n.parent.is_some()) {
            errs.push(format!("root list entry {r} is not a parentless node"));
        }
    }

    // Reachability and depth from the roots; anything unreached is on a cycle.
    let mut reached = BTreeSet::new();
    let mut stack: Vec<(NodeId, u32)> = tree.roots().iter().map(|&r| (r, 0)).collect();
    while let Some((id, depth)) = stack.pop() {
        if !reached.insert(id) {
            errs.push(format!("node {id} reached twice"));
            continue;
        }
        if let Some(n) = nodes.get(&id) {
            if n.depth != depth {
                errs.push(format!("node {id} depth {} expected {depth}", n.depth));
            }
            stack.extend(n.children.iter().map(|&c| (c, depth + 1)));
        }
    }
    if reached.len() != nodes.len() {
        errs.push(format!(
            "{} nodes unreachable from roots",
            nodes.len().saturating_sub(reached.len())
        ));
    }

    // Entity bookkeeping.
    let mut seen: BTreeMap<_, BTreeSet<NodeId>> = BTreeMap::new();
    for n in nodes.values() {
        for eid in n.entities.keys() {
            seen.entry(*eid).or_default().insert(n.id);
        }
    }
    if seen.len() != tree.entity_count() {
        errs.push(format!(
            "entity_count {} but {} distinct entities stored",
            tree.entity_count(),
            seen.len()
        ));
    }
    for (eid, leaves) in &seen {
        if tree.placements_of(*eid) != Some(leaves) {
            errs.push(format!("placement index stale for entity {eid}"));
        }
    }

    // Branching bounds, modulo refused merges.
    let mut tolerated = Vec::new();
    if errs.is_empty() {
        let mut groups: Vec<(Option<NodeId>, Vec<NodeId>, usize)> =
            vec![(None, tree.roots().iter().copied().collect(), cfg.max_roots)];
        groups.extend(
            nodes
                .values()
                .map(|n| (Some(n.id), n.children.iter().copied().collect(), cfg.branching)),
        );
        for (parent, kids, limit) in groups {
            if kids.len() <= limit {
                continue;
            }
            if has_mergeable_pair(tree, oracle, parent, &kids)? {
                errs.push(format!(
                    "{} has {} children (limit {limit}) with a mergeable pair",
                    parent.map_or("root list".to_string(), |p| p.to_string()),
                    kids.len()
                ));
            } else {
                tolerated.push(parent);
            }
        }
    }

    // Every summary must admit a compression chain obeying gamma.
    if errs.is_empty() {
        let freq = tree.token_frequencies(oracle);
        for n in nodes.values() {
            let chain = oracle.abstraction_chain(&n.summary, cfg.levels, cfg.gamma, &freq)?;
            if !chain_satisfies_gamma(&chain, cfg.gamma) {
                errs.push(format!("abstraction chain of {} violates gamma", n.id));
            }
        }
    }

    if !errs.is_empty() {
        let shown: Vec<_> = errs.iter().take(5).cloned().collect();
        return Err(Error::Structure(format!(
            "{} violation(s): {}",
            errs.len(),
            shown.join("; ")
        )));
    }
    Ok(ValidationReport {
        nodes: nodes.len(),
        entities: seen.len(),
        placements: tree.placement_count(),
        max_depth: tree.max_depth(),
        tolerated_overloads: tolerated,
    })
}

fn has_mergeable_pair(
    tree: &SemanticTree,
    oracle: &dyn SemanticOracle,
    parent: Option<NodeId>,
    kids: &[NodeId],
) -> Result<bool> {
    let nodes = tree.nodes();
    let parent_summary = parent.map(|p| &nodes[&p].summary);
    for (i, a) in kids.iter().enumerate() {
        for b in &kids[i + 1..] {
            let (sa, sb) = (&nodes[a].summary, &nodes[b].summary);
            if let MergeOutcome::Merged(_) = oracle.merge_concepts(sa, sb, parent_summary)? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}
