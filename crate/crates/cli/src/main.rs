//! `shimi`: build, query, synchronize and benchmark semantic memory trees.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use shimi_core::bench::{self, BenchOptions, Suite, SUITE_NAMES};
use shimi_core::codec::{read_snapshot, write_snapshot};
use shimi_core::config::ShimiConfig;
use shimi_core::retrieval::{retrieve, QueryStatus, UsageMode};
use shimi_core::sync::{partial_sync, SyncOptions};
use shimi_core::tree::validate;
use shimi_core::{AgentId, EntityId, Execution, SemanticOracle, SemanticTree, TokenOracle};

#[derive(Debug, Parser)]
#[command(name = "shimi", version, about = "Semantic hierarchical memory index")]
struct Cli {
    /// Seed for generated corpora and schedules.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// TOML file with [tree] and [oracle] sections.
    #[arg(long, global = true, env = "SHIMI_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Records,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Insert a JSON-lines corpus into a snapshot (created if absent).
    Insert {
        snapshot: PathBuf,
        corpus: PathBuf,
        /// Agent id owning a newly created tree.
        #[arg(long, default_value_t = 1)]
        agent: u64,
    },
    /// Retrieve entities for a query.
    Query {
        snapshot: PathBuf,
        query: String,
        /// Similarity threshold; defaults to the tree's configured delta.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Count hits on contributing leaves and save the snapshot.
        #[arg(long)]
        record_usage: bool,
    },
    /// Partially synchronize two snapshots in place.
    Sync { a: PathBuf, b: PathBuf },
    /// Run a benchmark suite and write tables and series files.
    Bench {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITE_NAMES))]
        suite: String,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// Run without data parallelism.
        #[arg(long)]
        sequential: bool,
    },
    /// Check every structural invariant of a snapshot.
    Validate { snapshot: PathBuf },
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = Result<bool, Failure>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    concept: String,
    explanation: String,
    #[serde(default)]
    id: Option<String>,
}

struct Ctx {
    cfg: ShimiConfig,
    explicit_config: bool,
    oracle: TokenOracle,
    format: Format,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => ShimiConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ShimiConfig::default(),
    };
    let ctx = Ctx {
        oracle: cfg.build_oracle()?,
        explicit_config: cli.config.is_some(),
        cfg,
        format: cli.format,
        seed: cli.seed,
    };
    match cli.command {
        Command::Insert {
            snapshot,
            corpus,
            agent,
        } => cmd_insert(&ctx, &snapshot, &corpus, agent),
        Command::Query {
            snapshot,
            query,
            delta,
            k,
            record_usage,
        } => cmd_query(&ctx, &snapshot, &query, delta, k, record_usage),
        Command::Sync { a, b } => cmd_sync(&ctx, &a, &b),
        Command::Bench {
            suite,
            out,
            sequential,
        } => cmd_bench(&ctx, &suite, out, sequential),
        Command::Validate { snapshot } => cmd_validate(&ctx, &snapshot),
    }
}

fn load(ctx: &Ctx, path: &Path) -> anyhow::Result<SemanticTree> {
    let tree = read_snapshot(path).with_context(|| format!("reading {}", path.display()))?;
    if ctx.explicit_config && !tree.config().compatible(&ctx.cfg.tree) {
        bail!(
            "{} was built with a different tree config than --config",
            path.display()
        );
    }
    Ok(tree)
}

fn cmd_insert(ctx: &Ctx, snapshot: &Path, corpus: &Path, agent: u64) -> CmdResult {
    let mut tree = if snapshot.exists() {
        load(ctx, snapshot)?
    } else {
        SemanticTree::new(ctx.cfg.tree.clone(), AgentId(agent))?
    };
    let file = fs::File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?;
    let stats = ctx.oracle.stats();
    let before = stats.snapshot();
    let mut out = io::stdout().lock();
    let (mut ok, mut failed, mut new_placements) = (0usize, 0usize, 0usize);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match insert_record(&mut tree, &ctx.oracle, &line) {
            Ok((id, placements, added)) => {
                ok += 1;
                new_placements += added;
                let calls = stats.snapshot().since(&before).total();
                match ctx.format {
                    Format::Human => writeln!(
                        out,
                        "line {line_no}: {id} attached at {placements} node(s), {added} new; oracle calls so far {calls}"
                    )?,
                    Format::Records => writeln!(
                        out,
                        "{}",
                        json!({"line": line_no, "entity_id": id.to_string(), "attachments": placements,
                               "new_placements": added, "oracle_calls": calls})
                    )?,
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("line {line_no}: {e:#}");
            }
        }
    }
    write_snapshot(snapshot, &tree)?;
    let calls = stats.snapshot().since(&before);
    match ctx.format {
        Format::Human => writeln!(
            out,
            "inserted {ok} record(s), {failed} failed, {new_placements} new placement(s); oracle calls {} (relation {}, similarity {}, merge {}, abstraction {})",
            calls.total(), calls.relation, calls.similarity, calls.merge, calls.abstraction
        )?,
        Format::Records => writeln!(
            out,
            "{}",
            json!({"inserted": ok, "failed": failed, "new_placements": new_placements,
                   "oracle_calls": calls.total()})
        )?,
    }
    Ok(failed == 0)
}

fn insert_record(
    tree: &mut SemanticTree,
    oracle: &dyn SemanticOracle,
    line: &str,
) -> anyhow::Result<(EntityId, usize, usize)> {
    let rec: CorpusRecord = serde_json::from_str(line).context("malformed record")?;
    let (concept, explanation) = (rec.concept.trim(), rec.explanation.trim());
    if concept.is_empty() || explanation.is_empty() {
        bail!("concept and explanation must be non-empty");
    }
    let id = match &rec.id {
        Some(ext) => EntityId::from_external(ext),
        None => EntityId::from_content(concept, explanation),
    };
    // Re-inserting a stored entity is a no-op and must not advance the
    // clock.
    if let Some(ps) = tree.placements_of(id) {
        let first = *ps.iter().next().expect("placement sets are non-empty");
        let held = &tree.node(first)?.entities[&id];
        if held.concept.as_str() == concept && held.explanation == explanation {
            return Ok((id, ps.len(), 0));
        }
        bail!(shimi_core::Error::DuplicateEntity(id));
    }
    let e = tree.make_entity(id, concept, explanation)?;
    let r = tree.add_entity(oracle, e)?;
    Ok((id, r.placements.len(), r.new_placements))
}

fn cmd_query(
    ctx: &Ctx,
    snapshot: &Path,
    query: &str,
    delta: Option<f64>,
    k: usize,
    record_usage: bool,
) -> CmdResult {
    if query.trim().is_empty() {
        return Err(Failure::Usage("query text is empty".into()));
    }
    if k == 0 {
        return Err(Failure::Usage("--k must be positive".into()));
    }
    if let Some(d) = delta {
        if !(0.0..=1.0).contains(&d) {
            return Err(Failure::Usage(format!("--delta {d} outside [0, 1]")));
        }
    }
    let mut tree = load(ctx, snapshot)?;
    let delta = delta.unwrap_or(tree.config().delta);
    let mode = if record_usage {
        UsageMode::Record
    } else {
        UsageMode::ReadOnly
    };
    let result = retrieve(&mut tree, &ctx.oracle, query, delta, k, mode)?;
    if record_usage {
        write_snapshot(snapshot, &tree)?;
    }
    let mut out = io::stdout().lock();
    match ctx.format {
        Format::Human => {
            if result.status == QueryStatus::NoSemanticPath {
                writeln!(out, "no semantic path ({} nodes visited)", result.visited_nodes)?;
            } else {
                for r in result.records() {
                    writeln!(
                        out,
                        "{:>3}  {:.4}  {}  {}  [{}]",
                        r.rank, r.score, r.entity_id, r.concept, r.path
                    )?;
                }
                writeln!(
                    out,
                    "{} result(s), {} nodes visited",
                    result.entities.len(),
                    result.visited_nodes
                )?;
            }
        }
        Format::Records => {
            for r in result.records() {
                writeln!(out, "{}", serde_json::to_string(&r)?)?;
            }
            if result.status == QueryStatus::NoSemanticPath {
                eprintln!("no semantic path");
            }
        }
    }
    Ok(true)
}

fn cmd_sync(ctx: &Ctx, a: &Path, b: &Path) -> CmdResult {
    let mut ta = load(ctx, a)?;
    let mut tb = load(ctx, b)?;
    let report = partial_sync(&mut ta, &mut tb, &ctx.oracle, SyncOptions::default())?;
    write_snapshot(a, &ta)?;
    write_snapshot(b, &tb)?;
    let mut out = io::stdout().lock();
    match ctx.format {
        Format::Human => writeln!(
            out,
            "diverged={} rounds={} subtree_size={} bytes_sent={} bytes_received={} full_state_bytes={} savings={:.4} conflicts_resolved={} repairs={} merge_time={:.1?}",
            report.diverged,
            report.rounds,
            report.subtree_size,
            report.bytes_sent,
            report.bytes_received,
            report.full_state_bytes,
            report.savings(),
            report.conflicts_resolved,
            report.repairs,
            report.resolution_time
        )?,
        Format::Records => {
            let mut v = serde_json::to_value(&report)?;
            v["savings"] = json!(report.savings());
            writeln!(out, "{v}")?;
        }
    }
    Ok(true)
}

fn cmd_bench(ctx: &Ctx, suite: &str, out: PathBuf, sequential: bool) -> CmdResult {
    let suite: Suite = suite
        .parse()
        .map_err(|e: shimi_core::Error| Failure::Usage(e.to_string()))?;
    let opts = BenchOptions {
        seed: ctx.seed,
        out,
        exec: if sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        config: ctx.cfg.tree.clone(),
    };
    let result = bench::run_suite(suite, &opts, &ctx.oracle)?;
    let mut stdout = io::stdout().lock();
    for t in &result.timings {
        writeln!(stdout, "{t}")?;
    }
    for f in &result.files {
        writeln!(stdout, "wrote {}", f.display())?;
    }
    Ok(true)
}

fn cmd_validate(ctx: &Ctx, snapshot: &Path) -> CmdResult {
    let tree = load(ctx, snapshot)?;
    let mut out = io::stdout().lock();
    match validate(&tree, &ctx.oracle) {
        Ok(r) => {
            match ctx.format {
                Format::Human => writeln!(
                    out,
                    "ok: {} nodes, {} entities, {} placements, max depth {}, {} tolerated overload(s)",
                    r.nodes,
                    r.entities,
                    r.placements,
                    r.max_depth,
                    r.tolerated_overloads.len()
                )?,
                Format::Records => writeln!(
                    out,
                    "{}",
                    json!({"valid": true, "nodes": r.nodes, "entities": r.entities,
                           "placements": r.placements, "max_depth": r.max_depth})
                )?,
            }
            Ok(true)
        }
        Err(e) => {
            match ctx.format {
                Format::Human => writeln!(out, "invalid: {e}")?,
                Format::Records => {
                    writeln!(out, "{}", json!({"valid": false, "error": e.to_string()}))?
                }
            }
            Ok(false)
        }
    }
}
