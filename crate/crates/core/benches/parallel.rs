use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use shimi_core::exec::{self, Execution};
use shimi_core::netsim::{build_tree, run_many, Scenario, Vocabulary};
use shimi_core::retrieval::{flat_candidates, flat_scan_baseline, search_batch};
use shimi_core::sync::merkle::sha256;
use shimi_core::sync::BloomSummary;
use shimi_core::{AgentId, TokenOracle, TreeConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn retrieval(c: &mut Criterion) {
    let o = TokenOracle::new();
    let cfg = TreeConfig::default();
    let v = Vocabulary::new(Default::default()).unwrap();
    let tree = build_tree(&v, 2000, &cfg, AgentId(0), &o).unwrap();
    let cands = flat_candidates(&tree);
    let queries = v.queries(200, 1);

    let mut g = c.benchmark_group("flat_scan_2000");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| flat_scan_baseline(&cands, &o, &queries[0], 10, mode).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("batch_queries_200");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| search_batch(&tree, &o, &queries, cfg.delta, 10, mode).unwrap())
        });
    }
    g.finish();
}

fn bloom_probes(c: &mut Criterion) {
    let mut filter = BloomSummary::with_capacity(1000, 0.01, 0).unwrap();
    for i in 0u64..1000 {
        filter.insert(&sha256(&[b"in", &i.to_be_bytes()]));
    }
    let mut g = c.benchmark_group("bloom_absent_probes_20000");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                exec::map_range(mode, 20_000, |i| {
                    filter.contains(&sha256(&[b"out", &(i as u64).to_be_bytes()]))
                })
                .into_iter()
                .filter(|&hit| hit)
                .count()
            })
        });
    }
    g.finish();
}

fn scenarios(c: &mut Criterion) {
    let o = TokenOracle::new();
    let batch: Vec<Scenario> = (0..8)
        .map(|seed| Scenario {
            agents: 4,
            seed,
            base_entities: 20,
            edits: 60,
            conflict_rate: 0.2,
            sync_every: 20,
            ..Default::default()
        })
        .collect();
    let mut g = c.benchmark_group("scenarios_8_seeds");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &batch, |b, batch| {
            b.iter(|| run_many(batch, &o, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, retrieval, bloom_probes, scenarios);
criterion_main!(benches);
