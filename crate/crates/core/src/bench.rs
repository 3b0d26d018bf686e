//! Benchmark suites mirroring the evaluation exhibits: traversal cost,
//! sync bandwidth, retrieval scalability and conflict resolution.
//!
//! Each suite writes JSON-lines tables and two-column series files
//! (`x<TAB>y`) into the output directory, plus a `summary.json` for the run.
//! Only deterministic quantities go into files; wall-clock timings are
//! returned separately for display.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::netsim::{
    bandwidth_experiment, measure_traversal, run_many, CorpusSpec, Scenario, Topology, Vocabulary,
};
use crate::oracle::SemanticOracle;
use crate::retrieval::{flat_candidates, flat_scan_baseline, search_batch};
use crate::tree::{validate, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Traversal,
    Bandwidth,
    Scalability,
    Conflict,
    All,
}

pub const SUITE_NAMES: &[&str] = &["traversal", "bandwidth", "scalability", "conflict", "all"];

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "traversal" => Self::Traversal,
            "bandwidth" => Self::Bandwidth,
            "scalability" => Self::Scalability,
            "conflict" => Self::Conflict,
            "all" => Self::All,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown suite {s:?}; expected one of {}",
                    SUITE_NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Self::Traversal,
            Self::Bandwidth,
            Self::Scalability,
            Self::Conflict,
            Self::All,
        ]
        .iter()
        .position(|s| s == self)
        .expect("listed");
        f.write_str(SUITE_NAMES[i])
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub seed: u64,
    pub out: PathBuf,
    pub exec: Execution,
    pub config: TreeConfig,
}

#[derive(Debug, Default, Clone)]
pub struct BenchOutput {
    pub files: Vec<PathBuf>,
    /// Deterministic headline numbers, also written to `summary.json`.
    pub summary: serde_json::Map<String, Value>,
    /// Human-readable timing lines; never written to files.
    pub timings: Vec<String>,
}

pub const TRAVERSAL_SIZES: &[usize] = &[50, 100, 250, 500, 1000, 2000];
pub const SCALABILITY_SIZES: &[usize] = &[100, 500, 1000, 2000];
pub const BANDWIDTH_AGENTS: &[usize] = &[3, 4, 5, 6];
pub const BANDWIDTH_ENTITIES: usize = 500;
pub const BANDWIDTH_DIVERGENCE: f64 = 0.05;
pub const CONFLICT_RATES: &[f64] = &[0.0, 0.1, 0.2, 0.3];

struct Writer<'a> {
    dir: &'a Path,
    out: &'a mut BenchOutput,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, content: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        self.out.files.push(path);
        Ok(())
    }

    fn table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let body = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect();
        self.write(name, body)
    }

    fn series(&mut self, name: &str, points: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
        let body = points.into_iter().map(|(x, y)| format!("{x}\t{y}\n")).collect();
        self.write(name, body)
    }
}

/// Runs one suite (or all) and writes its files under `opts.out`.
pub fn run_suite(
    suite: Suite,
    opts: &BenchOptions,
    oracle: &dyn SemanticOracle,
) -> Result<BenchOutput> {
    fs::create_dir_all(&opts.out)?;
    let mut out = BenchOutput::default();
    let suites = match suite {
        Suite::All => vec![
            Suite::Traversal,
            Suite::Bandwidth,
            Suite::Scalability,
            Suite::Conflict,
        ],
        s => vec![s],
    };
    for s in suites {
        let mut w = Writer {
            dir: &opts.out,
            out: &mut out,
        };
        match s {
            Suite::Traversal => traversal(opts, oracle, &mut w)?,
            Suite::Bandwidth => bandwidth(opts, oracle, &mut w)?,
            Suite::Scalability => scalability(opts, oracle, &mut w)?,
            Suite::Conflict => conflict(opts, oracle, &mut w)?,
            Suite::All => unreachable!("expanded above"),
        }
    }
    let summary = serde_json::to_string_pretty(&Value::Object(out.summary.clone()))
        .expect("summary serializes")
        + "\n";
    Writer {
        dir: &opts.out,
        out: &mut out,
    }
    .write("summary.json", summary)?;
    Ok(out)
}

fn vocab(opts: &BenchOptions) -> Result<Vocabulary> {
    Vocabulary::new(CorpusSpec {
        domains: opts.config.max_roots,
        fanout: opts.config.branching,
        seed: opts.seed,
    })
}

fn traversal(opts: &BenchOptions, oracle: &dyn SemanticOracle, w: &mut Writer<'_>) -> Result<()> {
    let v = vocab(opts)?;
    let queries = v.queries(100, opts.seed);
    let rows = measure_traversal(&v, TRAVERSAL_SIZES, &queries, &opts.config, oracle, opts.exec)?;
    w.table("traversal.jsonl", &rows)?;
    w.series(
        "traversal_shimi.tsv",
        rows.iter().map(|r| (r.max_depth as f64, r.shimi_visits)),
    )?;
    w.series(
        "traversal_flat.tsv",
        rows.iter().map(|r| (r.max_depth as f64, r.flat_visits)),
    )?;
    w.out.summary.insert(
        "traversal".into(),
        json!({
            "sizes": TRAVERSAL_SIZES,
            "shimi_visits": rows.iter().map(|r| r.shimi_visits).collect::<Vec<_>>(),
            "flat_visits": rows.iter().map(|r| r.flat_visits).collect::<Vec<_>>(),
            "max_depth": rows.iter().map(|r| r.max_depth).collect::<Vec<_>>(),
        }),
    );
    Ok(())
}

fn bandwidth(opts: &BenchOptions, oracle: &dyn SemanticOracle, w: &mut Writer<'_>) -> Result<()> {
    let mut rows = Vec::new();
    for &n in BANDWIDTH_AGENTS {
        let start = Instant::now();
        let (row, reports) = bandwidth_experiment(
            n,
            BANDWIDTH_ENTITIES,
            BANDWIDTH_DIVERGENCE,
            opts.seed,
            &opts.config,
            oracle,
        )?;
        let merge: std::time::Duration = reports.iter().map(|r| r.resolution_time).sum();
        w.out.timings.push(format!(
            "bandwidth agents={n}: {} sync events in {:.1?}, merge phase {:.1?}",
            row.sync_events,
            start.elapsed(),
            merge
        ));
        rows.push(row);
    }
    w.table("bandwidth.jsonl", &rows)?;
    w.series(
        "bandwidth_partial_bytes.tsv",
        rows.iter().map(|r| (r.agents as f64, r.partial_bytes as f64)),
    )?;
    w.series(
        "bandwidth_full_bytes.tsv",
        rows.iter().map(|r| (r.agents as f64, r.full_bytes as f64)),
    )?;
    w.series(
        "bandwidth_savings.tsv",
        rows.iter().map(|r| (r.agents as f64, r.min_savings)),
    )?;
    w.out.summary.insert(
        "bandwidth".into(),
        json!({
            "agents": BANDWIDTH_AGENTS,
            "min_savings": rows.iter().map(|r| r.min_savings).collect::<Vec<_>>(),
            "mean_savings": rows.iter().map(|r| r.mean_savings).collect::<Vec<_>>(),
            "matches_full_state": rows.iter().all(|r| r.matches_full_state),
        }),
    );
    Ok(())
}

fn scalability(opts: &BenchOptions, oracle: &dyn SemanticOracle, w: &mut Writer<'_>) -> Result<()> {
    let v = vocab(opts)?;
    let queries = v.queries(200, opts.seed.wrapping_add(1));
    let rows = measure_traversal(&v, SCALABILITY_SIZES, &queries, &opts.config, oracle, opts.exec)?;
    // Latency is measured on freshly built trees and reported only for
    // display.
    for &n in SCALABILITY_SIZES {
        let t = crate::netsim::build_tree(&v, n, &opts.config, crate::tree::AgentId(0), oracle)?;
        validate(&t, oracle)?;
        let start = Instant::now();
        search_batch(&t, oracle, &queries, opts.config.delta, 10, opts.exec)?;
        let shimi = start.elapsed() / queries.len() as u32;
        let cands = flat_candidates(&t);
        let start = Instant::now();
        for q in &queries {
            flat_scan_baseline(&cands, oracle, q, 10, opts.exec)?;
        }
        let flat = start.elapsed() / queries.len() as u32;
        w.out.timings.push(format!(
            "scalability n={n}: query latency shimi {shimi:.1?}, flat scan {flat:.1?}"
        ));
    }
    w.table("scalability.jsonl", &rows)?;
    w.series(
        "scalability_shimi_visits.tsv",
        rows.iter().map(|r| (r.n as f64, r.shimi_visits)),
    )?;
    w.series(
        "scalability_flat_visits.tsv",
        rows.iter().map(|r| (r.n as f64, r.flat_visits)),
    )?;
    w.out.summary.insert(
        "scalability".into(),
        json!({
            "sizes": SCALABILITY_SIZES,
            "shimi_visits": rows.iter().map(|r| r.shimi_visits).collect::<Vec<_>>(),
            "flat_visits": rows.iter().map(|r| r.flat_visits).collect::<Vec<_>>(),
        }),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConflictRow {
    conflict_rate: f64,
    conflict_edits: usize,
    conflicts_resolved: usize,
    sync_events: usize,
    converged: bool,
}

fn conflict(opts: &BenchOptions, oracle: &dyn SemanticOracle, w: &mut Writer<'_>) -> Result<()> {
    let scenarios: Vec<Scenario> = CONFLICT_RATES
        .iter()
        .map(|&rate| Scenario {
            name: format!("conflict-{rate}"),
            agents: 4,
            seed: opts.seed,
            tree: opts.config.clone(),
            base_entities: 100,
            edits: 200,
            insert_fraction: 0.2,
            conflict_rate: rate,
            sync_every: 20,
            topology: Topology::Ring,
            ..Default::default()
        })
        .collect();
    let outcomes = run_many(&scenarios, oracle, opts.exec)?;
    let mut rows = Vec::new();
    for (rate, o) in CONFLICT_RATES.iter().zip(&outcomes) {
        let resolved: usize = o.sync_reports().map(|r| r.conflicts_resolved).sum();
        let merges = resolved.max(1) as u32;
        w.out.timings.push(format!(
            "conflict rate={rate}: {resolved} conflicts resolved, merge phase {:.1?} ({:.1?} per conflict)",
            o.total_resolution_time(),
            o.total_resolution_time() / merges
        ));
        rows.push(ConflictRow {
            conflict_rate: *rate,
            conflict_edits: o.conflict_edits,
            conflicts_resolved: resolved,
            sync_events: o.sync_reports().count(),
            converged: o.converged(),
        });
        for a in &o.agents {
            validate(&a.tree, oracle)?;
        }
    }
    w.table("conflict.jsonl", &rows)?;
    w.series(
        "conflict_resolved.tsv",
        rows.iter().map(|r| (r.conflict_rate, r.conflicts_resolved as f64)),
    )?;
    w.out.summary.insert(
        "conflict".into(),
        json!({
            "rates": CONFLICT_RATES,
            "conflicts_resolved": rows.iter().map(|r| r.conflicts_resolved).collect::<Vec<_>>(),
            "converged": rows.iter().all(|r| r.converged),
        }),
    );
    Ok(())
}
