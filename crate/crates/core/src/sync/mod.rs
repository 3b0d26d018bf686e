//! Replica reconciliation: Merkle digests locate divergent subtrees, Bloom
//! summaries of those subtrees decide which records to ship, and a
//! convergent per-node merge folds them in.

pub mod bloom;
pub mod crdt;
pub mod merkle;
pub mod session;
pub mod wire;

pub use bloom::{bloom_for_subtree, BloomSummary};
pub use crdt::{crdt_merge, join_records};
pub use merkle::{find_diff, merkle_hash, Digest, DigestTable};
pub use session::{
    compute_delta, full_state_sync_baseline, partial_sync, SyncOptions, SyncReport,
};
