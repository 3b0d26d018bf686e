mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_node, random_phrase, random_tree};
use shimi_core::codec::{encode_nodes, encode_record, encode_snapshot};
use shimi_core::sync::bloom::reconciliation_key;
use shimi_core::sync::{
    bloom_for_subtree, compute_delta, crdt_merge, merkle_hash, partial_sync, BloomSummary,
    SyncOptions,
};
use shimi_core::tree::{validate, EntityId, NodeId};
use shimi_core::{AgentId, SemanticTree, TokenOracle};

/// Applies `count` random local edits: new entities and summary rewrites.
fn mutate(t: &mut SemanticTree, o: &TokenOracle, rng: &mut ChaCha8Rng, count: usize, tag: &str) {
    for step in 0..count {
        if rng.random_bool(0.5) || t.is_empty() {
            let concept = random_phrase(rng, 1, 3);
            let explanation = format!("{concept} {tag} step{step}");
            let e = t
                .make_entity(EntityId::from_content(&concept, &explanation), &concept, &explanation)
                .unwrap();
            t.add_entity(o, e).unwrap();
        } else {
            let ids: Vec<NodeId> = t.nodes().keys().copied().collect();
            let id = ids[rng.random_range(0..ids.len())];
            let text = format!("{} {tag}{step}", random_phrase(rng, 1, 2));
            t.set_summary(id, &text).unwrap();
        }
    }
}

fn replicas(seed: u64, edits: usize, o: &TokenOracle) -> (SemanticTree, SemanticTree) {
    let base = random_tree(seed, 25, o);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let mut a = base.fork(AgentId(1));
    let mut b = base.fork(AgentId(2));
    let ea = rng.random_range(0..=edits);
    let eb = rng.random_range(0..=edits);
    mutate(&mut a, o, &mut rng, ea, "ax");
    mutate(&mut b, o, &mut rng, eb, "bx");
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn insertion_keeps_bookkeeping_consistent(seed in 0u64..10_000) {
        let o = TokenOracle::new();
        let t = random_tree(seed, 40, &o);
        let report = validate(&t, &o).unwrap();
        prop_assert_eq!(report.entities, t.entity_count());
        let held: usize = t.nodes().values().map(|n| n.entities.len()).sum();
        prop_assert_eq!(held, t.placement_count());
        for (e, leaf) in t.entities() {
            prop_assert!(leaf.children.is_empty());
            prop_assert!(t.placements_of(e.id).unwrap().contains(&leaf.id));
        }
    }

    #[test]
    fn building_is_deterministic(seed in 0u64..10_000) {
        let o = TokenOracle::new();
        let a = random_tree(seed, 30, &o);
        let b = random_tree(seed, 30, &o);
        prop_assert_eq!(encode_snapshot(&a), encode_snapshot(&b));
    }

    #[test]
    fn repeated_insert_is_a_noop(seed in 0u64..10_000) {
        let o = TokenOracle::new();
        let mut t = random_tree(seed, 20, &o);
        let before = encode_snapshot(&t);
        let (e, _) = t.entities().next().map(|(e, l)| (e.clone(), l.id)).unwrap();
        let r = t.add_entity(&o, e).unwrap();
        prop_assert_eq!(r.new_placements, 0);
        prop_assert_eq!(encode_snapshot(&t), before);
    }

    #[test]
    fn merge_is_a_semilattice(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_node(&mut rng), random_node(&mut rng), random_node(&mut rng));
        let enc = |n| encode_record(&n);
        prop_assert_eq!(enc(crdt_merge(&a, &b).unwrap()), enc(crdt_merge(&b, &a).unwrap()));
        prop_assert_eq!(enc(crdt_merge(&a, &a).unwrap()), enc(a.clone()));
        let left = crdt_merge(&crdt_merge(&a, &b).unwrap(), &c).unwrap();
        let right = crdt_merge(&a, &crdt_merge(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(enc(left), enc(right));
    }

    #[test]
    fn bloom_has_no_false_negatives(seed in 0u64..10_000, salt in any::<u64>()) {
        let o = TokenOracle::new();
        let t = random_tree(seed, 50, &o);
        let table = merkle_hash(&t);
        for &root in t.nodes().keys() {
            let f = bloom_for_subtree(&t, &table, root, 0.01, salt).unwrap();
            for id in t.subtree_ids(root) {
                prop_assert!(f.contains(&reconciliation_key(salt, id, &table.entries[&id].record)));
            }
        }
    }

    #[test]
    fn delta_shrinks_as_the_peer_filter_grows(seed in 0u64..10_000) {
        let o = TokenOracle::new();
        let t = random_tree(seed, 40, &o);
        let table = merkle_hash(&t);
        let root = *t.roots().iter().next().unwrap();
        let ids = t.subtree_ids(root);
        let salt = seed;
        let mut f = BloomSummary::with_capacity(ids.len() as u64, 0.01, salt).unwrap();
        let mut prev: BTreeSet<NodeId> =
            compute_delta(&t, &table, root, &f).iter().map(|n| n.id).collect();
        prop_assert_eq!(prev.len(), ids.len());
        for id in &ids {
            f.insert(&reconciliation_key(salt, *id, &table.entries[id].record));
            let cur: BTreeSet<NodeId> =
                compute_delta(&t, &table, root, &f).iter().map(|n| n.id).collect();
            prop_assert!(cur.is_subset(&prev));
            prev = cur;
        }
        prop_assert!(prev.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn partial_sync_converges(seed in 0u64..1_000_000) {
        let o = TokenOracle::new();
        let (mut a, mut b) = replicas(seed, 8, &o);
        let report = partial_sync(&mut a, &mut b, &o, SyncOptions::default()).unwrap();
        prop_assert!(report.rounds <= SyncOptions::default().max_rounds);
        prop_assert_eq!(encode_nodes(&a), encode_nodes(&b));
        prop_assert_eq!(merkle_hash(&a).root, merkle_hash(&b).root);
        validate(&a, &o).unwrap();

        let again = partial_sync(&mut a, &mut b, &o, SyncOptions::default()).unwrap();
        prop_assert!(!again.diverged);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Repairs choose merge stamps from the state at hand, so orderings only
    // coincide when the unions never overflow a node.
    #[test]
    fn sync_order_does_not_matter_without_repairs(seed in 0u64..1_000_000) {
        let o = TokenOracle::new();
        let base = random_tree(seed, 15, &o);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut peers: Vec<SemanticTree> = (2..4).map(|i| base.fork(AgentId(i))).collect();
        for (i, p) in peers.iter_mut().enumerate() {
            mutate(p, &o, &mut rng, 3, &format!("p{i}x"));
        }
        let run = |order: [usize; 2]| {
            let mut a = base.fork(AgentId(1));
            let mut ps = peers.clone();
            let mut repairs = 0;
            for i in order {
                repairs += partial_sync(&mut a, &mut ps[i], &o, SyncOptions::default())
                    .unwrap()
                    .repairs;
            }
            (encode_nodes(&a), repairs)
        };
        let (x, rx) = run([0, 1]);
        let (y, ry) = run([1, 0]);
        prop_assume!(rx == 0 && ry == 0);
        prop_assert_eq!(x, y);
    }
}
