//! Deterministic multi-agent simulation: a seeded corpus, scenario
//! schedules, pairwise sync accounting and traversal measurements.

pub mod corpus;
pub mod scenario;
pub mod sim;
pub mod traversal;

use crate::error::Result;
use crate::exec::{self, Execution};
use crate::oracle::SemanticOracle;

pub use corpus::{CorpusItem, CorpusSpec, Vocabulary};
pub use scenario::{Op, Scenario, SyncStrategy, Topology};
pub use sim::{
    bandwidth_experiment, build_tree, run_scenario, Agent, BandwidthRow, MetricsFrame,
    ScenarioOutcome,
};
pub use traversal::{measure_traversal, TraversalRow};

/// Runs independent scenarios, concurrently when `mode` allows. Results
/// keep the input order.
pub fn run_many(
    scenarios: &[Scenario],
    oracle: &dyn SemanticOracle,
    mode: Execution,
) -> Result<Vec<ScenarioOutcome>> {
    exec::try_map(mode, scenarios, |s| run_scenario(s, oracle))
}
