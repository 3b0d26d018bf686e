//! Traversal cost of hierarchical retrieval against the flat scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::netsim::corpus::Vocabulary;
use crate::netsim::sim::extend_tree;
use crate::oracle::SemanticOracle;
use crate::retrieval::{flat_candidates, flat_scan_baseline, search_batch};
use crate::tree::{depth_estimate, AgentId, SemanticTree, TreeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalRow {
    pub n: usize,
    pub max_depth: u32,
    pub depth_estimate: f64,
    pub shimi_visits: f64,
    pub flat_visits: f64,
    /// Mean number of entities returned per query.
    pub shimi_results: f64,
}

/// For each size, grows one tree to the first `n` corpus items and runs the
/// query set through retrieval and the flat scan.
pub fn measure_traversal(
    vocab: &Vocabulary,
    sizes: &[usize],
    queries: &[String],
    config: &TreeConfig,
    oracle: &dyn SemanticOracle,
    mode: Execution,
) -> Result<Vec<TraversalRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sizes must be strictly ascending"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("query set is empty"));
    }
    let mut tree = SemanticTree::new(config.clone(), AgentId(0))?;
    let mut built = 0;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        extend_tree(&mut tree, vocab, built..n, oracle)?;
        built = n;
        let results = search_batch(&tree, oracle, queries, config.delta, usize::MAX, mode)?;
        let candidates = flat_candidates(&tree);
        let mut flat_total = 0usize;
        for q in queries {
            flat_total += flat_scan_baseline(&candidates, oracle, q, 1, mode)?.visited;
        }
        let q = queries.len() as f64;
        rows.push(TraversalRow {
            n,
            max_depth: tree.max_depth(),
            depth_estimate: depth_estimate(
                n as u64,
                config.max_roots as u64,
                config.branching as u64,
            )?,
            shimi_visits: results.iter().map(|r| r.visited_nodes).sum::<usize>() as f64 / q,
            flat_visits: flat_total as f64 / q,
            shimi_results: results.iter().map(|r| r.entities.len()).sum::<usize>() as f64 / q,
        });
    }
    Ok(rows)
}
