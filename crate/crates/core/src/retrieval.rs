//! Threshold-pruned hierarchical retrieval and the flat-scan baseline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::oracle::SemanticOracle;
use crate::tree::{Entity, EntityId, NodeId, SemanticTree};

/// Whether a query counts hits on the leaves it returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsageMode {
    Record,
    ReadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryStatus {
    Found,
    /// No leaf was reachable through nodes above the threshold.
    NoSemanticPath,
}

/// One scored entity with the leaf it was found at.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity: Entity,
    pub score: f64,
    pub leaf: Option<NodeId>,
    pub leaf_usage: u64,
}

impl Candidate {
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(other.leaf_usage.cmp(&self.leaf_usage))
            .then(other.entity.created_at.cmp(&self.entity.created_at))
            .then(self.entity.id.cmp(&other.entity.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntity {
    pub candidate: Candidate,
    /// Root-to-leaf summaries through which the entity was reached.
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub entities: Vec<RankedEntity>,
    /// Nodes whose similarity to the query was evaluated.
    pub visited_nodes: usize,
    pub status: QueryStatus,
}

impl QueryResult {
    pub fn entity_ids(&self) -> Vec<EntityId> {
        self.entities.iter().map(|r| r.candidate.entity.id).collect()
    }

    /// Leaves that contributed at least one returned entity.
    pub fn contributing_leaves(&self) -> BTreeSet<NodeId> {
        self.entities.iter().filter_map(|r| r.candidate.leaf).collect()
    }

    /// One line-delimited record per returned entity.
    pub fn records(&self) -> Vec<QueryRecord> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, r)| QueryRecord {
                rank: i + 1,
                entity_id: r.candidate.entity.id.to_string(),
                score: r.candidate.score,
                concept: r.candidate.entity.concept.as_str().to_owned(),
                path: r.path.join(">"),
            })
            .collect()
    }
}

/// Serialized form of one ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub rank: usize,
    pub entity_id: String,
    pub score: f64,
    pub concept: String,
    pub path: String,
}

/// Orders candidates by similarity, leaf usage, recency, then id, and keeps
/// the first `k`.
pub fn rank(mut candidates: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    candidates.sort_by(Candidate::rank_cmp);
    candidates.truncate(k);
    candidates
}

fn check_params(query: &str, delta: f64, k: usize) -> Result<()> {
    if query.trim().is_empty() {
        return Err(Error::invalid("query is empty"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta {delta} outside [0, 1]")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    Ok(())
}

/// Level-order traversal from every root, expanding only nodes with
/// `similarity(query, summary) >= delta`; passing leaves contribute their
/// entities. Does not modify the tree.
pub fn search(
    tree: &SemanticTree,
    oracle: &dyn SemanticOracle,
    query: &str,
    delta: f64,
    k: usize,
) -> Result<QueryResult> {
    check_params(query, delta, k)?;
    let nodes = tree.nodes();
    let mut frontier: Vec<NodeId> = tree.roots().iter().copied().collect();
    let mut visited = 0usize;
    // Best candidate per entity when it is reachable at several leaves.
    let mut best: BTreeMap<EntityId, Candidate> = BTreeMap::new();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for id in frontier {
            let node = &nodes[&id];
            visited += 1;
            let sim = oracle.similarity(query, node.summary.as_str())?;
            if sim < delta {
                continue;
            }
            if node.is_leaf() {
                for e in node.entities.values() {
                    let c = Candidate {
                        entity: e.clone(),
                        score: sim,
                        leaf: Some(id),
                        leaf_usage: node.usage_count,
                    };
                    match best.get(&e.id) {
                        Some(prev) if prev.rank_cmp(&c) != Ordering::Greater => {}
                        _ => {
                            best.insert(e.id, c);
                        }
                    }
                }
            } else {
                next.extend(node.children.iter().copied());
            }
        }
        frontier = next;
    }
    let ranked = rank(best.into_values().collect(), k);
    let status = if ranked.is_empty() {
        QueryStatus::NoSemanticPath
    } else {
        QueryStatus::Found
    };
    let entities = ranked
        .into_iter()
        .map(|c| {
            let leaf = c.leaf.expect("tree candidates carry their leaf");
            let path = tree
                .path_to(leaf)
                .map(|p| p.into_iter().map(|s| s.as_str().to_owned()).collect())?;
            Ok(RankedEntity { candidate: c, path })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryResult {
        entities,
        visited_nodes: visited,
        status,
    })
}

/// [`search`], then (in [`UsageMode::Record`]) one usage hit per leaf that
/// contributed a returned entity.
pub fn retrieve(
    tree: &mut SemanticTree,
    oracle: &dyn SemanticOracle,
    query: &str,
    delta: f64,
    k: usize,
    mode: UsageMode,
) -> Result<QueryResult> {
    let result = search(tree, oracle, query, delta, k)?;
    if mode == UsageMode::Record {
        tree.record_usage(&result.contributing_leaves())?;
    }
    Ok(result)
}

/// Runs read-only searches for many queries.
pub fn search_batch(
    tree: &SemanticTree,
    oracle: &dyn SemanticOracle,
    queries: &[String],
    delta: f64,
    k: usize,
    mode: Execution,
) -> Result<Vec<QueryResult>> {
    exec::try_map(mode, queries, |q| search(tree, oracle, q, delta, k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatScanResult {
    pub ranked: Vec<Candidate>,
    /// Always the number of entities scanned.
    pub visited: usize,
}

/// Scores every entity's concept against the query and ranks them.
pub fn flat_scan_baseline(
    entities: &[Candidate],
    oracle: &dyn SemanticOracle,
    query: &str,
    k: usize,
    mode: Execution,
) -> Result<FlatScanResult> {
    check_params(query, 0.0, k)?;
    let scored = exec::try_map(mode, entities, |c| {
        oracle
            .similarity(query, c.entity.concept.as_str())
            .map(|score| Candidate { score, ..c.clone() })
    })?;
    Ok(FlatScanResult {
        ranked: rank(scored, k),
        visited: entities.len(),
    })
}

/// The distinct entities of a tree as flat-scan input.
pub fn flat_candidates(tree: &SemanticTree) -> Vec<Candidate> {
    tree.entities()
        .map(|(e, leaf)| Candidate {
            entity: e.clone(),
            score: 0.0,
            leaf: Some(leaf.id),
            leaf_usage: leaf.usage_count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{SummaryText, TokenOracle};
    use crate::tree::{AgentId, Timestamp, TreeConfig};

    fn entity(id: u128, concept: &str, counter: u64) -> Entity {
        Entity::new(
            EntityId(id),
            SummaryText::new(concept, 20).unwrap(),
            format!("{concept} detail"),
            Timestamp::new(counter, AgentId(1)),
        )
        .unwrap()
    }

    fn cand(id: u128, score: f64, usage: u64, counter: u64) -> Candidate {
        Candidate {
            entity: entity(id, "x", counter),
            score,
            leaf: None,
            leaf_usage: usage,
        }
    }

    #[test]
    fn rank_keys_in_order() {
        let r = rank(vec![cand(1, 0.2, 0, 0), cand(2, 0.9, 0, 0)], 10);
        assert_eq!(r[0].entity.id, EntityId(2));
        let r = rank(vec![cand(1, 0.5, 1, 0), cand(2, 0.5, 3, 0)], 10);
        assert_eq!(r[0].entity.id, EntityId(2));
        let r = rank(vec![cand(1, 0.5, 1, 4), cand(2, 0.5, 1, 9)], 10);
        assert_eq!(r[0].entity.id, EntityId(2));
        let r = rank(vec![cand(9, 0.5, 1, 4), cand(3, 0.5, 1, 4)], 10);
        assert_eq!(r[0].entity.id, EntityId(3));
        assert_eq!(rank(vec![cand(1, 0.1, 0, 0)], 5).len(), 1);
        assert_eq!(rank(vec![cand(1, 0.1, 0, 0), cand(2, 0.3, 0, 0)], 1).len(), 1);
    }

    fn small_tree(o: &TokenOracle) -> SemanticTree {
        let mut t = SemanticTree::new(TreeConfig::default(), AgentId(1)).unwrap();
        for (c, x) in [
            ("grid storage", "grid storage batteries"),
            ("grid demand", "grid demand forecast"),
            ("loan risk", "loan risk scoring"),
            ("loan pricing", "loan pricing model"),
        ] {
            let e = t.make_entity(EntityId::from_content(c, x), c, x).unwrap();
            t.add_entity(o, e).unwrap();
        }
        t
    }

    #[test]
    fn exact_match_at_threshold_one() {
        let o = TokenOracle::new();
        let t = small_tree(&o);
        let r = search(&t, &o, "loan risk", 1.0, 10).unwrap();
        // Roots ("grid", "loan") fail at delta 1 so nothing is reachable.
        assert_eq!(r.status, QueryStatus::NoSemanticPath);
        let r = search(&t, &o, "loan risk", 0.3, 10).unwrap();
        assert_eq!(r.entities[0].candidate.score, 1.0);
        assert_eq!(r.entities[0].path, vec!["loan", "loan risk"]);
    }

    #[test]
    fn zero_threshold_returns_everything() {
        let o = TokenOracle::new();
        let t = small_tree(&o);
        let r = search(&t, &o, "unrelated words", 0.0, usize::MAX).unwrap();
        assert_eq!(r.entities.len(), 4);
        assert_eq!(r.visited_nodes, t.nodes().len());
        for w in r.entities.windows(2) {
            assert!(w[0].candidate.score >= w[1].candidate.score);
        }
    }

    #[test]
    fn record_mode_counts_usage() {
        let o = TokenOracle::new();
        let mut t = small_tree(&o);
        let r = retrieve(&mut t, &o, "grid storage", 0.3, 1, UsageMode::Record).unwrap();
        let leaf = r.entities[0].candidate.leaf.unwrap();
        assert_eq!(t.nodes()[&leaf].usage_count, 1);
        retrieve(&mut t, &o, "grid storage", 0.3, 1, UsageMode::ReadOnly).unwrap();
        assert_eq!(t.nodes()[&leaf].usage_count, 1);
    }

    #[test]
    fn invalid_params() {
        let o = TokenOracle::new();
        let t = small_tree(&o);
        assert!(search(&t, &o, "", 0.3, 1).is_err());
        assert!(search(&t, &o, "x", 1.3, 1).is_err());
        assert!(search(&t, &o, "x", 0.3, 0).is_err());
    }

    #[test]
    fn flat_scan_visits_everything() {
        let o = TokenOracle::new();
        let t = small_tree(&o);
        let c = flat_candidates(&t);
        let r = flat_scan_baseline(&c, &o, "loan pricing", 2, Execution::Sequential).unwrap();
        assert_eq!(r.visited, 4);
        assert_eq!(r.ranked.len(), 2);
        assert_eq!(r.ranked[0].entity.concept.as_str(), "loan pricing");
        let p = flat_scan_baseline(&c, &o, "loan pricing", 2, Execution::Parallel).unwrap();
        assert_eq!(p, r);
    }

    #[test]
    fn records_join_paths() {
        let o = TokenOracle::new();
        let t = small_tree(&o);
        let r = search(&t, &o, "grid demand", 0.3, 1).unwrap();
        let rec = &r.records()[0];
        assert_eq!(rec.rank, 1);
        assert_eq!(rec.path, "grid>grid demand");
    }
}
