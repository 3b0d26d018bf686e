//! Semantic hierarchical memory index.
//!
//! Knowledge is stored as entities at the leaves of a bounded-branching tree
//! of concept summaries. Insertion descends from root buckets toward the most
//! specific matching concept; retrieval walks the same hierarchy, pruning
//! every branch whose summary falls below a similarity threshold. Replicas of
//! a tree reconcile with a partial synchronization protocol built on Merkle
//! digests, Bloom-filter summaries and a convergent per-node merge.

pub mod bench;
pub mod codec;
pub mod config;
pub mod error;
pub mod exec;
pub mod netsim;
pub mod oracle;
pub mod retrieval;
pub mod sync;
pub mod tree;

pub use error::{Error, Result};
pub use exec::Execution;
pub use oracle::{Relation, SemanticOracle, SummaryText, TokenOracle};
pub use tree::{AgentId, ConceptNode, Entity, EntityId, NodeId, SemanticTree, TreeConfig};
