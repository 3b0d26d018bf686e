//! Entity insertion: bucket matching, semantic descent, sibling matching and
//! overload merging.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::{derive_id, AgentId, ConceptNode, Entity, NodeId, SemanticTree, SummaryRank, Timestamp};
use crate::error::{Error, Result};
use crate::oracle::{gamma_bound, MergeOutcome, Relation, SemanticOracle, SummaryText};

/// How stamps for structural merges are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampMode {
    /// Tick the local clock; used for the owner's own edits.
    Local,
    /// Derive the stamp from the records involved so that replicas holding
    /// identical state make byte-identical repairs.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeStep {
    pub left: NodeId,
    pub right: NodeId,
    pub merged_into: NodeId,
    pub summary: String,
}

/// Outcome of resolving an overloaded node (or the root list when `parent`
/// is `None`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeReport {
    pub parent: Option<NodeId>,
    pub steps: Vec<MergeStep>,
    /// Every candidate pair was refused; the overload was left in place.
    pub overloaded: bool,
}

impl MergeReport {
    pub fn is_noop(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InsertReport {
    /// Nodes holding the entity after the call.
    pub placements: Vec<NodeId>,
    /// Placements added by this call; zero for a repeated insert.
    pub new_placements: usize,
    pub created_root: Option<NodeId>,
    /// Merge activity triggered by the insert (only nodes that overflowed).
    pub merges: Vec<MergeReport>,
    /// Relation checks performed at each descent level.
    pub visits_per_level: Vec<usize>,
}

impl SemanticTree {
    /// Inserts an entity, returning the leaves it was attached to.
    pub fn add_entity(&mut self, oracle: &dyn SemanticOracle, e: Entity) -> Result<InsertReport> {
        if e.concept.word_count() > self.config.max_summary_words {
            return Err(Error::invalid(format!(
                "concept has {} words, limit is {}",
                e.concept.word_count(),
                self.config.max_summary_words
            )));
        }
        if e.explanation.trim().is_empty() {
            return Err(Error::invalid("entity explanation is empty"));
        }
        if let Some(leaves) = self.placements.get(&e.id) {
            let leaf = leaves.iter().next().expect("placement set non-empty");
            let stored = &self.nodes[leaf].entities[&e.id];
            if !stored.same_content(&e) {
                return Err(Error::DuplicateEntity(e.id));
            }
            return Ok(InsertReport {
                placements: leaves.iter().copied().collect(),
                ..Default::default()
            });
        }
        self.observe(e.created_at.counter);

        let (roots, created_root) = self.match_bucket(oracle, &e)?;
        let (stops, visits_per_level) = self.descend(oracle, &roots, &e.explanation)?;
        let mut placements = BTreeSet::new();
        let mut merges = Vec::new();
        let mut new_placements = 0;
        for p in stops {
            let (leaf, added, report) = self.attach(oracle, p, &e)?;
            placements.insert(leaf);
            new_placements += usize::from(added);
            if let Some(r) = report {
                merges.push(r);
            }
        }
        // Merges may have moved leaves but never remove them.
        let placements: Vec<NodeId> = placements.into_iter().collect();
        self.placements
            .insert(e.id, placements.iter().copied().collect());
        Ok(InsertReport {
            placements,
            new_placements,
            created_root,
            merges,
            visits_per_level,
        })
    }

    /// Roots whose summary is similar enough to the entity's concept.
    ///
    /// On a miss a new root is created while fewer than `R` exist; otherwise
    /// the most similar root is used (smaller id on ties).
    pub fn match_to_bucket(
        &mut self,
        oracle: &dyn SemanticOracle,
        e: &Entity,
    ) -> Result<BTreeSet<NodeId>> {
        self.match_bucket(oracle, e).map(|(r, _)| r)
    }

    fn match_bucket(
        &mut self,
        oracle: &dyn SemanticOracle,
        e: &Entity,
    ) -> Result<(BTreeSet<NodeId>, Option<NodeId>)> {
        let mut matched = BTreeSet::new();
        let mut best: Option<(f64, NodeId)> = None;
        for &r in &self.roots {
            let sim = oracle.similarity(e.concept.as_str(), self.nodes[&r].summary.as_str())?;
            if sim >= self.config.delta {
                matched.insert(r);
            }
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, r));
            }
        }
        if !matched.is_empty() {
            return Ok((matched, None));
        }
        if self.roots.len() >= self.config.max_roots {
            let (_, r) = best.expect("root list is full, so non-empty");
            return Ok(([r].into(), None));
        }
        let mut freq = self.token_frequencies(oracle);
        freq.add_tokens(oracle.tokens(e.concept.as_str()));
        let chain =
            oracle.abstraction_chain(&e.concept, self.config.levels, self.config.gamma, &freq)?;
        let summary = chain.last().expect("chain is non-empty").clone();
        let (id, ts) = self.fresh_node_id();
        self.nodes.insert(
            id,
            ConceptNode {
                id,
                summary,
                summary_rank: SummaryRank::default(),
                parent: None,
                placed_at: ts,
                children: BTreeSet::new(),
                entities: Default::default(),
                depth: 0,
                usage_count: 0,
                last_modified: ts,
            },
        );
        self.roots.insert(id);
        Ok(([id].into(), Some(id)))
    }

    /// Walks down from `roots`, following every child whose summary is an
    /// ancestor of (or equivalent to) `explanation`. Returns the nodes where
    /// no child qualifies.
    pub fn descend_tree(
        &self,
        oracle: &dyn SemanticOracle,
        roots: &BTreeSet<NodeId>,
        explanation: &str,
    ) -> Result<BTreeSet<NodeId>> {
        self.descend(oracle, roots, explanation).map(|(s, _)| s)
    }

    fn descend(
        &self,
        oracle: &dyn SemanticOracle,
        roots: &BTreeSet<NodeId>,
        explanation: &str,
    ) -> Result<(BTreeSet<NodeId>, Vec<usize>)> {
        let mut visited: BTreeSet<NodeId> = roots.clone();
        let mut frontier: Vec<NodeId> = roots.iter().copied().collect();
        let mut stops = BTreeSet::new();
        let mut visits = Vec::new();
        while !frontier.is_empty() {
            let mut next = BTreeSet::new();
            let mut evaluated = 0;
            for id in frontier {
                let node = self.node(id)?;
                let mut advanced = false;
                for &c in &node.children {
                    evaluated += 1;
                    let rel = oracle.get_relation(self.nodes[&c].summary.as_str(), explanation)?;
                    if rel.admits_descent() {
                        advanced = true;
                        if visited.insert(c) {
                            next.insert(c);
                        }
                    }
                }
                if !advanced {
                    stops.insert(id);
                }
            }
            if evaluated > 0 {
                visits.push(evaluated);
            }
            frontier = next.into_iter().collect();
        }
        Ok((stops, visits))
    }

    /// The child of `parent` equivalent to `concept` with the highest
    /// similarity, ties to the smaller id.
    pub fn find_similar_sibling(
        &self,
        oracle: &dyn SemanticOracle,
        parent: NodeId,
        concept: &str,
    ) -> Result<Option<NodeId>> {
        let mut best: Option<(f64, NodeId)> = None;
        for &c in &self.node(parent)?.children {
            let summary = self.nodes[&c].summary.as_str();
            if oracle.get_relation(concept, summary)? != Relation::Equivalent {
                continue;
            }
            let sim = oracle.similarity(concept, summary)?;
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, c));
            }
        }
        Ok(best.map(|(_, id)| id))
    }

    /// Attaches `e` at or below stop node `p`. Returns the holding leaf,
    /// whether a new placement was made, and any merge triggered.
    fn attach(
        &mut self,
        oracle: &dyn SemanticOracle,
        p: NodeId,
        e: &Entity,
    ) -> Result<(NodeId, bool, Option<MergeReport>)> {
        let mut parent = p;
        let stop = self.node(p)?;
        if stop.holds_entities() {
            if oracle.get_relation(stop.summary.as_str(), e.concept.as_str())?
                == Relation::Equivalent
            {
                let added = self.put_entity(p, e);
                return Ok((p, added, None));
            }
            // Entity-holding leaves never gain children; go beside them.
            parent = stop.parent.expect("roots never hold entities");
        }
        loop {
            match self.find_similar_sibling(oracle, parent, e.concept.as_str())? {
                Some(v) if self.nodes[&v].holds_entities() => {
                    let added = self.put_entity(v, e);
                    return Ok((v, added, None));
                }
                Some(v) => parent = v,
                None => {
                    let leaf = self.new_leaf(parent, e);
                    let report = self.merge_overloaded(oracle, Some(parent), StampMode::Local)?;
                    let report = (!report.is_noop() || report.overloaded).then_some(report);
                    return Ok((leaf, true, report));
                }
            }
        }
    }

    fn put_entity(&mut self, leaf: NodeId, e: &Entity) -> bool {
        if self.nodes[&leaf].entities.contains_key(&e.id) {
            return false;
        }
        let ts = self.tick();
        let n = self.nodes.get_mut(&leaf).expect("leaf exists");
        n.entities.insert(e.id, e.clone());
        n.last_modified = ts;
        true
    }

    fn new_leaf(&mut self, parent: NodeId, e: &Entity) -> NodeId {
        let (id, ts) = self.fresh_node_id();
        let depth = self.nodes[&parent].depth + 1;
        self.nodes.insert(
            id,
            ConceptNode {
                id,
                summary: e.concept.clone(),
                summary_rank: SummaryRank { depth, usage: 0 },
                parent: Some(parent),
                placed_at: ts,
                children: BTreeSet::new(),
                entities: [(e.id, e.clone())].into(),
                depth,
                usage_count: 0,
                last_modified: ts,
            },
        );
        let p = self.nodes.get_mut(&parent).expect("parent exists");
        p.children.insert(id);
        p.last_modified = ts;
        id
    }

    /// Merges the most similar children of an overloaded node under a new
    /// abstraction until it has at most `T` children. `None` targets the root
    /// list, bounded by `R`.
    pub fn merge_overloaded(
        &mut self,
        oracle: &dyn SemanticOracle,
        parent: Option<NodeId>,
        mode: StampMode,
    ) -> Result<MergeReport> {
        let limit = match parent {
            Some(_) => self.config.branching,
            None => self.config.max_roots,
        };
        let mut report = MergeReport {
            parent,
            ..Default::default()
        };
        loop {
            let kids: Vec<NodeId> = match parent {
                Some(p) => self.node(p)?.children.iter().copied().collect(),
                None => self.roots.iter().copied().collect(),
            };
            if kids.len() <= limit {
                break;
            }
            let mut pairs = Vec::with_capacity(kids.len() * (kids.len() - 1) / 2);
            for (i, &a) in kids.iter().enumerate() {
                for &b in &kids[i + 1..] {
                    let sim = oracle.similarity(
                        self.nodes[&a].summary.as_str(),
                        self.nodes[&b].summary.as_str(),
                    )?;
                    pairs.push((sim, a, b));
                }
            }
            pairs.sort_by(|x, y| {
                y.0.partial_cmp(&x.0)
                    .unwrap_or(Ordering::Equal)
                    .then((x.1, x.2).cmp(&(y.1, y.2)))
            });
            let parent_summary = parent.map(|p| self.nodes[&p].summary.clone());
            let mut step = None;
            for (_, a, b) in pairs {
                let (sa, sb) = (&self.nodes[&a].summary, &self.nodes[&b].summary);
                if let MergeOutcome::Merged(m) =
                    oracle.merge_concepts(sa, sb, parent_summary.as_ref())?
                {
                    let summary = self.fit_merged_summary(oracle, m, a, b)?;
                    let text = summary.as_str().to_owned();
                    let merged_into = self.create_merge_node(parent, a, b, summary, mode);
                    step = Some(MergeStep {
                        left: a,
                        right: b,
                        merged_into,
                        summary: text,
                    });
                    break;
                }
            }
            match step {
                Some(s) => report.steps.push(s),
                None => {
                    report.overloaded = true;
                    break;
                }
            }
        }
        Ok(report)
    }

    /// Enforces the compression ratio on a strictly generalizing merge.
    fn fit_merged_summary(
        &self,
        oracle: &dyn SemanticOracle,
        merged: SummaryText,
        a: NodeId,
        b: NodeId,
    ) -> Result<SummaryText> {
        let (sa, sb) = (&self.nodes[&a].summary, &self.nodes[&b].summary);
        if &merged == sa || &merged == sb {
            return Ok(merged);
        }
        let target = gamma_bound(self.config.gamma, sa.word_count().min(sb.word_count())).max(1);
        if merged.word_count() <= target {
            return Ok(merged);
        }
        let freq = self.token_frequencies(oracle);
        oracle.compress(&merged, target, &freq)
    }

    fn create_merge_node(
        &mut self,
        parent: Option<NodeId>,
        a: NodeId,
        b: NodeId,
        summary: SummaryText,
        mode: StampMode,
    ) -> NodeId {
        let stamp = match mode {
            StampMode::Local => self.tick(),
            StampMode::Derived => {
                let counter = [Some(a), Some(b), parent]
                    .into_iter()
                    .flatten()
                    .map(|id| {
                        let n = &self.nodes[&id];
                        n.placed_at.counter.max(n.last_modified.counter)
                    })
                    .max()
                    .unwrap_or(0)
                    + 1;
                self.observe(counter);
                Timestamp::new(counter, AgentId::REPAIR)
            }
        };
        let mut attempt = 0u32;
        let id = loop {
            let id = NodeId(derive_id(
                "shimi/merge",
                &[&a.to_bytes(), &b.to_bytes(), &attempt.to_be_bytes()],
            ));
            if !self.nodes.contains_key(&id) {
                break id;
            }
            attempt += 1;
        };
        let depth = parent.map_or(0, |p| self.nodes[&p].depth + 1);
        self.nodes.insert(
            id,
            ConceptNode {
                id,
                summary,
                summary_rank: SummaryRank { depth, usage: 0 },
                parent,
                placed_at: stamp,
                children: [a, b].into(),
                entities: Default::default(),
                depth,
                usage_count: 0,
                last_modified: stamp,
            },
        );
        for c in [a, b] {
            let n = self.nodes.get_mut(&c).expect("child exists");
            n.parent = Some(id);
            n.placed_at = stamp;
            n.last_modified = stamp;
        }
        match parent {
            Some(p) => {
                let pn = self.nodes.get_mut(&p).expect("parent exists");
                pn.children.remove(&a);
                pn.children.remove(&b);
                pn.children.insert(id);
                pn.last_modified = stamp;
            }
            None => {
                self.roots.remove(&a);
                self.roots.remove(&b);
                self.roots.insert(id);
            }
        }
        self.refresh_depths(id);
        id
    }

    fn refresh_depths(&mut self, from: NodeId) {
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            let depth = self.nodes[&id].depth;
            let kids: Vec<NodeId> = self.nodes[&id].children.iter().copied().collect();
            for c in kids {
                self.nodes.get_mut(&c).expect("child exists").depth = depth + 1;
                stack.push(c);
            }
        }
    }

    /// Resolves every overloaded node and an overfull root list. Returns the
    /// reports of nodes that were touched, including refused overloads.
    pub fn repair_overloads(
        &mut self,
        oracle: &dyn SemanticOracle,
        mode: StampMode,
    ) -> Result<Vec<MergeReport>> {
        let mut reports: Vec<MergeReport> = Vec::new();
        loop {
            let mut changed = false;
            let mut targets: Vec<Option<NodeId>> = Vec::new();
            if self.roots.len() > self.config.max_roots {
                targets.push(None);
            }
            targets.extend(
                self.nodes
                    .values()
                    .filter(|n| n.children.len() > self.config.branching)
                    .map(|n| Some(n.id)),
            );
            for t in targets {
                let r = self.merge_overloaded(oracle, t, mode)?;
                changed |= !r.is_noop();
                match reports.iter_mut().find(|x| x.parent == t) {
                    Some(prev) => {
                        prev.steps.extend(r.steps);
                        prev.overloaded = r.overloaded;
                    }
                    None => reports.push(r),
                }
            }
            if !changed {
                break;
            }
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::TokenOracle;
    use crate::tree::{validate, EntityId, TreeConfig};

    fn tree() -> SemanticTree {
        SemanticTree::new(TreeConfig::default(), AgentId(1)).unwrap()
    }

    fn insert(t: &mut SemanticTree, o: &TokenOracle, concept: &str, expl: &str) -> InsertReport {
        let e = t
            .make_entity(EntityId::from_content(concept, expl), concept, expl)
            .unwrap();
        t.add_entity(o, e).unwrap()
    }

    #[test]
    fn insert_into_empty_tree() {
        let o = TokenOracle::new();
        let mut t = tree();
        let r = insert(&mut t, &o, "market risk analysis", "market risk analysis of bonds");
        assert_eq!(t.entity_count(), 1);
        assert_eq!(t.roots().len(), 1);
        let root = &t.nodes()[r.created_root.as_ref().unwrap()];
        // 3 words, gamma 0.5, L = 3: 3 -> 2 -> 1, later words dropped first.
        assert_eq!(root.summary.as_str(), "market");
        assert_eq!(r.placements.len(), 1);
        let leaf = &t.nodes()[&r.placements[0]];
        assert!(leaf.is_leaf());
        assert_eq!(leaf.parent, Some(root.id));
        assert_eq!(leaf.summary.as_str(), "market risk analysis");
        validate(&t, &o).unwrap();
    }

    #[test]
    fn repeated_insert_is_noop() {
        let o = TokenOracle::new();
        let mut t = tree();
        let a = insert(&mut t, &o, "market risk", "market risk of bonds");
        let enc = crate::codec::encode_nodes(&t);
        let b = insert(&mut t, &o, "market risk", "market risk of bonds");
        assert_eq!(a.placements, b.placements);
        assert_eq!(b.new_placements, 0);
        assert_eq!(t.entity_count(), 1);
        assert_eq!(enc, crate::codec::encode_nodes(&t));
    }

    #[test]
    fn conflicting_duplicate_id_is_rejected() {
        let o = TokenOracle::new();
        let mut t = tree();
        let id = EntityId(7);
        let e = t.make_entity(id, "market risk", "one").unwrap();
        t.add_entity(&o, e).unwrap();
        let e = t.make_entity(id, "market risk", "two").unwrap();
        assert!(matches!(t.add_entity(&o, e), Err(Error::DuplicateEntity(_))));
    }

    #[test]
    fn overload_merges_related_children() {
        let o = TokenOracle::new();
        let mut t = tree();
        let concepts = [
            "ops alpha one",
            "ops beta two",
            "ops gamma three",
            "ops delta four",
            "ops alpha five",
        ];
        for c in concepts {
            insert(&mut t, &o, c, &format!("{c} detail"));
        }
        let root = *t.roots().iter().next().unwrap();
        let kids = &t.nodes()[&root].children;
        assert_eq!(kids.len(), 4);
        let merged: Vec<_> = kids
            .iter()
            .map(|k| &t.nodes()[k])
            .filter(|n| !n.is_leaf())
            .collect();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].summary.as_str(), "ops alpha");
        let leaves: BTreeSet<&str> = merged[0]
            .children
            .iter()
            .map(|c| t.nodes()[c].summary.as_str())
            .collect();
        assert_eq!(leaves, ["ops alpha five", "ops alpha one"].into());
        assert_eq!(merged[0].depth, 1);
        for c in &merged[0].children {
            assert_eq!(t.nodes()[c].depth, 2);
        }
        validate(&t, &o).unwrap();
    }

    #[test]
    fn refused_merges_leave_overload() {
        let o = TokenOracle::new();
        let mut t = SemanticTree::new(
            TreeConfig {
                max_roots: 1,
                branching: 2,
                delta: 0.0,
                ..TreeConfig::default()
            },
            AgentId(1),
        )
        .unwrap();
        // Single-word children with disjoint tokens: every pair refuses.
        insert(&mut t, &o, "x", "x base");
        insert(&mut t, &o, "p", "p one");
        insert(&mut t, &o, "q", "q two");
        let root = *t.roots().iter().next().unwrap();
        assert_eq!(t.nodes()[&root].children.len(), 3);
        let r = t.merge_overloaded(&o, Some(root), StampMode::Local).unwrap();
        assert!(r.overloaded && r.is_noop());
        validate(&t, &o).unwrap();
    }

    #[test]
    fn descend_follows_nested_chain() {
        let o = TokenOracle::new();
        let mut t = tree();
        let (r, _) = t.fresh_node_id();
        let (a, _) = t.fresh_node_id();
        let (b, _) = t.fresh_node_id();
        let mk = |id, s: &str, parent, children: &[NodeId], depth| ConceptNode {
            id,
            summary: SummaryText::new(s, 20).unwrap(),
            summary_rank: Default::default(),
            parent,
            placed_at: Default::default(),
            children: children.iter().copied().collect(),
            entities: Default::default(),
            depth,
            usage_count: 0,
            last_modified: Default::default(),
        };
        let nodes = [
            mk(r, "energy", None, &[a], 0),
            mk(a, "energy grid", Some(r), &[b], 1),
            mk(b, "energy grid storage", Some(a), &[], 2),
        ];
        let t = SemanticTree::from_parts(t.config().clone(), AgentId(1), 10, nodes).unwrap();
        let stops = t
            .descend_tree(&o, &[r].into(), "energy grid storage batteries")
            .unwrap();
        assert_eq!(stops, [b].into());
        let stops = t.descend_tree(&o, &[r].into(), "solar panels").unwrap();
        assert_eq!(stops, [r].into());
    }
}
