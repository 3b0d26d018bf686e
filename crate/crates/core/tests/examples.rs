//! Worked examples for insertion, retrieval and synchronization, each
//! checked against an answer computed here rather than by the library.

mod common;

use std::collections::BTreeSet;

use common::jaccard;
use shimi_core::codec::encode_snapshot;
use shimi_core::netsim::{build_tree, CorpusSpec, Vocabulary};
use shimi_core::oracle::SummaryText;
use shimi_core::retrieval::{flat_candidates, flat_scan_baseline, search};
use shimi_core::sync::bloom::reconciliation_key;
use shimi_core::sync::{
    bloom_for_subtree, compute_delta, find_diff, full_state_sync_baseline, merkle_hash,
    partial_sync, SyncOptions,
};
use shimi_core::tree::{validate, ConceptNode, Entity, EntityId, NodeId, StampMode, Timestamp};
use shimi_core::{AgentId, Execution, SemanticOracle, SemanticTree, TokenOracle, TreeConfig};

fn node(id: u128, summary: &str, parent: Option<u128>, children: &[u128], depth: u32) -> ConceptNode {
    ConceptNode {
        id: NodeId(id),
        summary: SummaryText::new(summary, 20).unwrap(),
        summary_rank: Default::default(),
        parent: parent.map(NodeId),
        placed_at: Default::default(),
        children: children.iter().map(|&c| NodeId(c)).collect(),
        entities: Default::default(),
        depth,
        usage_count: 0,
        last_modified: Default::default(),
    }
}

fn with_entity(mut n: ConceptNode, eid: u128, concept: &str) -> ConceptNode {
    let e = Entity::new(
        EntityId(eid),
        SummaryText::new(concept, 20).unwrap(),
        format!("{concept} notes"),
        Timestamp::new(eid as u64, AgentId(1)),
    )
    .unwrap();
    n.entities.insert(e.id, e);
    n
}

fn tree_of(cfg: TreeConfig, nodes: Vec<ConceptNode>) -> SemanticTree {
    SemanticTree::from_parts(cfg, AgentId(1), 100, nodes).unwrap()
}

fn some_leaf(t: &SemanticTree) -> NodeId {
    t.nodes()
        .values()
        .filter(|n| n.is_leaf() && n.parent.is_some())
        .map(|n| n.id)
        .nth(3)
        .unwrap()
}

fn ancestors_inclusive(t: &SemanticTree, id: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut cur = Some(id);
    while let Some(c) = cur {
        out.insert(c);
        cur = t.nodes()[&c].parent;
    }
    out
}

fn balanced(n: usize) -> (SemanticTree, TokenOracle) {
    let o = TokenOracle::new();
    let vocab = Vocabulary::new(CorpusSpec::default()).unwrap();
    let t = build_tree(&vocab, n, &TreeConfig::default(), AgentId(1), &o).unwrap();
    (t, o)
}

#[test]
fn equivalent_siblings_with_equal_similarity_pick_the_smaller_id() {
    let o = TokenOracle::new();
    let t = tree_of(
        TreeConfig::default(),
        vec![
            node(1, "grid", None, &[9, 5], 0),
            node(9, "grid storage", Some(1), &[], 1),
            node(5, "storage grid", Some(1), &[], 1),
        ],
    );
    // Both children carry the token set {grid, storage}.
    assert_eq!(jaccard("grid storage", "grid storage"), jaccard("grid storage", "storage grid"));
    let got = t.find_similar_sibling(&o, NodeId(1), "grid storage").unwrap();
    assert_eq!(got, Some(NodeId(5)));
}

#[test]
fn descent_returns_every_qualifying_branch() {
    let o = TokenOracle::new();
    let t = tree_of(
        TreeConfig::default(),
        vec![
            node(1, "energy", None, &[2, 3, 4], 0),
            node(2, "energy grid", Some(1), &[], 1),
            node(3, "energy storage", Some(1), &[], 1),
            node(4, "energy markets", Some(1), &[], 1),
        ],
    );
    let stops = t
        .descend_tree(&o, &[NodeId(1)].into(), "energy grid storage")
        .unwrap();
    assert_eq!(stops, [NodeId(2), NodeId(3)].into());
}

#[test]
fn full_root_list_falls_back_to_the_most_similar_root() {
    let o = TokenOracle::new();
    let cfg = TreeConfig {
        max_roots: 3,
        ..TreeConfig::default()
    };
    let summaries = [(1, "alpha"), (2, "beta gamma"), (3, "delta epsilon zeta")];
    let mut t = tree_of(
        cfg,
        summaries.iter().map(|&(id, s)| node(id, s, None, &[], 0)).collect(),
    );
    let concept = "beta omega kappa sigma";
    let e = t.make_entity(EntityId(77), concept, "beta omega notes").unwrap();
    for (_, s) in summaries {
        assert!(jaccard(concept, s) < t.config().delta);
    }
    let want = summaries
        .iter()
        .max_by(|a, b| jaccard(concept, a.1).total_cmp(&jaccard(concept, b.1)))
        .map(|&(id, _)| NodeId(id))
        .unwrap();
    assert_eq!(t.match_to_bucket(&o, &e).unwrap(), [want].into());
    assert_eq!(t.roots().len(), 3);
}

#[test]
fn overload_merges_the_most_similar_pair() {
    let o = TokenOracle::new();
    let cfg = TreeConfig {
        branching: 2,
        ..TreeConfig::default()
    };
    let kids = [(2, "solar panel yield"), (3, "solar panel cost"), (4, "fraud audit")];
    let mut nodes = vec![node(1, "field", None, &[2, 3, 4], 0)];
    nodes.extend(kids.iter().map(|&(id, s)| node(id, s, Some(1), &[], 1)));
    let mut t = tree_of(cfg, nodes);

    let mut best = (f64::MIN, 0, 0);
    for (i, a) in kids.iter().enumerate() {
        for b in &kids[i + 1..] {
            let s = jaccard(a.1, b.1);
            if s > best.0 {
                best = (s, a.0, b.0);
            }
        }
    }
    let r = t.merge_overloaded(&o, Some(NodeId(1)), StampMode::Local).unwrap();
    assert_eq!(r.steps.len(), 1);
    let step = &r.steps[0];
    assert_eq!((step.left, step.right), (NodeId(best.1), NodeId(best.2)));
    assert_eq!(t.nodes()[&NodeId(1)].children.len(), 2);
    let merged = &t.nodes()[&step.merged_into];
    assert_eq!(merged.children, [NodeId(2), NodeId(3)].into());
    assert_eq!(merged.summary.as_str(), "solar panel");
    validate(&t, &o).unwrap();
}

#[test]
fn flat_scan_matches_search_on_a_single_level_tree() {
    let o = TokenOracle::new();
    let concepts = ["grid storage", "solar storage", "credit risk", "grid demand", "fraud audit"];
    let ids: Vec<u128> = (10..10 + concepts.len() as u128).collect();
    let mut nodes = vec![node(1, "topics", None, &ids, 0)];
    for (&id, c) in ids.iter().zip(concepts) {
        nodes.push(with_entity(node(id, c, Some(1), &[], 1), id * 100, c));
    }
    let t = tree_of(
        TreeConfig {
            branching: concepts.len(),
            ..TreeConfig::default()
        },
        nodes,
    );
    for q in ["grid storage", "storage", "credit audit", "nothing here"] {
        let tree_ids = search(&t, &o, q, 0.0, 3).unwrap().entity_ids();
        let flat = flat_scan_baseline(&flat_candidates(&t), &o, q, 3, Execution::Sequential).unwrap();
        let flat_ids: Vec<EntityId> = flat.ranked.iter().map(|c| c.entity.id).collect();
        assert_eq!(tree_ids, flat_ids, "query {q:?}");
        assert_eq!(flat.visited, concepts.len());
    }
}

#[test]
fn one_character_flip_changes_only_the_root_path() {
    let (mut t, _) = balanced(200);
    let before = merkle_hash(&t);
    let leaf = some_leaf(&t);
    let mut text = t.nodes()[&leaf].summary.as_str().to_owned();
    let last = text.pop().unwrap();
    text.push(if last == 'a' { 'b' } else { 'a' });
    t.set_summary(leaf, &text).unwrap();
    let after = merkle_hash(&t);

    assert_ne!(before.root, after.root);
    let changed_subtree: BTreeSet<NodeId> = t
        .nodes()
        .keys()
        .filter(|id| before.entries[*id].subtree != after.entries[*id].subtree)
        .copied()
        .collect();
    assert_eq!(changed_subtree, ancestors_inclusive(&t, leaf));
    let changed_record: Vec<NodeId> = t
        .nodes()
        .keys()
        .filter(|id| before.entries[*id].record != after.entries[*id].record)
        .copied()
        .collect();
    assert_eq!(changed_record, vec![leaf]);
}

#[test]
fn find_diff_cases() {
    let (a, _) = balanced(200);
    let ta = merkle_hash(&a);
    assert!(find_diff(&ta, &ta).is_empty());

    let mut b = a.fork(AgentId(2));
    let leaf = some_leaf(&b);
    b.set_summary(leaf, "rewritten leaf summary").unwrap();
    assert_eq!(find_diff(&ta, &merkle_hash(&b)), [leaf].into());

    // Node ids derive from the creating agent, so independently built
    // trees share no roots.
    let o = TokenOracle::new();
    let vocab = Vocabulary::new(CorpusSpec::default()).unwrap();
    let c = build_tree(&vocab, 50, &TreeConfig::default(), AgentId(3), &o).unwrap();
    let all_roots: BTreeSet<NodeId> = a.roots().union(c.roots()).copied().collect();
    assert_eq!(find_diff(&ta, &merkle_hash(&c)), all_roots);
}

#[test]
fn single_node_divergence_ships_that_node() {
    let (a, o) = balanced(200);
    let mut b = a.fork(AgentId(2));
    let leaf = some_leaf(&b);
    b.set_summary(leaf, "rewritten leaf summary").unwrap();
    let (ta, tb) = (merkle_hash(&a), merkle_hash(&b));

    // A filter over the peer's single-node subtree lacks our version unless
    // the salt produces a false positive, which a later round's salt repairs.
    let first = (1u64..=3).find_map(|salt| {
        let f = bloom_for_subtree(&b, &tb, leaf, 0.01, salt).unwrap();
        let key = reconciliation_key(salt, leaf, &ta.entries[&leaf].record);
        let delta: Vec<NodeId> = compute_delta(&a, &ta, leaf, &f).iter().map(|n| n.id).collect();
        assert_eq!(delta.is_empty(), f.contains(&key));
        (!delta.is_empty()).then_some(delta)
    });
    assert_eq!(first, Some(vec![leaf]));

    let mut a = a;
    let report = partial_sync(&mut a, &mut b, &o, SyncOptions::default()).unwrap();
    assert!(report.rounds <= 3, "{} rounds", report.rounds);
    assert_eq!(merkle_hash(&a).root, merkle_hash(&b).root);
}

#[test]
fn one_leaf_edit_costs_a_fraction_of_a_snapshot() {
    let (mut a, o) = balanced(500);
    let mut b = a.fork(AgentId(2));
    let leaf = some_leaf(&b);
    b.set_summary(leaf, "rewritten leaf summary").unwrap();
    let snapshot = encode_snapshot(&a).len() as f64;
    let report = partial_sync(&mut a, &mut b, &o, SyncOptions::default()).unwrap();
    let ratio = report.total_bytes() as f64 / snapshot;
    assert!(ratio < 0.15, "partial sync moved {ratio:.3} of a snapshot");
    assert!((report.savings() - (1.0 - report.total_bytes() as f64 / report.full_state_bytes as f64)).abs() < 1e-12);
}

#[test]
fn full_state_baseline_lands_on_the_partial_sync_state() {
    let (base, o) = balanced(150);
    let vocab = Vocabulary::new(CorpusSpec::default()).unwrap();
    let mut a = base.fork(AgentId(1));
    let mut b = base.fork(AgentId(2));
    for (t, range, tag) in [(&mut a, 150..170, "a"), (&mut b, 170..185, "b")] {
        for i in range {
            let item = vocab.item(i);
            let e = t.make_entity(item.id(), &item.concept, &item.explanation).unwrap();
            t.add_entity(&o, e).unwrap();
        }
        let leaf = some_leaf(t);
        t.set_summary(leaf, &format!("edited by {tag}")).unwrap();
    }
    let (mut pa, mut pb) = (a.clone(), b.clone());
    partial_sync(&mut pa, &mut pb, &o, SyncOptions::default()).unwrap();
    let (mut fa, mut fb) = (a, b);
    full_state_sync_baseline(&mut fa, &mut fb, &o).unwrap();
    let roots = [&pa, &pb, &fa, &fb].map(|t| merkle_hash(t).root);
    assert!(roots.iter().all(|r| *r == roots[0]));
}

#[test]
fn bucket_match_and_descent_use_the_hand_counted_oracle_calls() {
    let o = TokenOracle::new();
    let mut t = tree_of(
        TreeConfig::default(),
        vec![
            node(1, "energy", None, &[2, 3, 4], 0),
            node(2, "energy grid", Some(1), &[], 1),
            node(3, "energy storage", Some(1), &[], 1),
            node(4, "energy markets", Some(1), &[], 1),
        ],
    );
    let e = t.make_entity(EntityId(5), "energy", "energy grid storage").unwrap();
    let before = o.stats().snapshot();
    let roots = t.match_to_bucket(&o, &e).unwrap();
    t.descend_tree(&o, &roots, &e.explanation).unwrap();
    let used = o.stats().snapshot().since(&before);
    // One similarity per root, one relation per child of each visited
    // node; the two stop nodes are leaves and cost nothing further.
    assert_eq!((used.similarity, used.relation), (1, 3));
    assert_eq!(used.total(), 4);
}
