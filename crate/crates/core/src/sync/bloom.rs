//! Bloom-filter summaries of subtree contents.

use crate::error::{Error, Result};
use crate::sync::merkle::{sha256, Digest, DigestTable};
use crate::tree::{NodeId, SemanticTree};

pub const DEFAULT_FPR: f64 = 0.01;

/// Bit array with double hashing over a 32-byte key: `h1` and `h2` are the
/// first two big-endian 8-byte words of the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomSummary {
    bits: Vec<u8>,
    m: u64,
    k: u32,
    n: u64,
    salt: u64,
}

/// Bits and hash count for `n` elements at false-positive rate `p`.
///
/// `k` follows the textbook formula. `m` is the textbook bit count rounded up
/// to the next prime so that every nonzero stride is a generator mod `m`;
/// this costs at most a few bits and keeps one-node filters near the target
/// rate.
pub fn bloom_params(n: u64, p: f64) -> (u64, u32) {
    if n == 0 {
        return (0, 1);
    }
    let ln2 = std::f64::consts::LN_2;
    let m = (-(n as f64) * p.ln() / (ln2 * ln2)).ceil() as u64;
    let k = ((m as f64 / n as f64) * ln2).round().max(1.0) as u32;
    (next_prime(m.max(2)), k)
}

fn next_prime(mut x: u64) -> u64 {
    let is_prime = |x: u64| x >= 2 && (2..).take_while(|d| d * d <= x).all(|d| !x.is_multiple_of(d));
    while !is_prime(x) {
        x += 1;
    }
    x
}

impl BloomSummary {
    pub fn with_capacity(n: u64, target_fpr: f64, salt: u64) -> Result<Self> {
        if !(target_fpr > 0.0 && target_fpr < 0.5) {
            return Err(Error::invalid(format!(
                "false-positive rate {target_fpr} outside (0, 0.5)"
            )));
        }
        let (m, k) = bloom_params(n, target_fpr);
        Ok(Self {
            bits: vec![0; m.div_ceil(8) as usize],
            m,
            k,
            n,
            salt,
        })
    }

    /// Rebuilds a filter received on the wire.
    pub fn from_parts(bits: Vec<u8>, m: u64, k: u32, n: u64, salt: u64) -> Result<Self> {
        if bits.len() as u64 != m.div_ceil(8) {
            return Err(Error::corrupt("bloom bit length does not match m"));
        }
        if k == 0 {
            return Err(Error::corrupt("bloom hash count is zero"));
        }
        Ok(Self { bits, m, k, n, salt })
    }

    /// Enhanced double hashing: the stride `h2` grows by `i` after probe
    /// `i`. Plain `h1 + i*h2` collapses onto a handful of bits whenever
    /// `h2 mod m` shares a factor with a small `m`, which inflates the
    /// false-positive rate of one- and two-node subtree filters several-fold.
    fn probes(&self, key: &Digest) -> impl Iterator<Item = u64> + '_ {
        let m = self.m;
        let mut a = u64::from_be_bytes(key[0..8].try_into().expect("8 bytes")) % m;
        let mut b = u64::from_be_bytes(key[8..16].try_into().expect("8 bytes")) % m;
        (0..self.k as u64).map(move |i| {
            let at = a;
            a = (a + b) % m;
            b = (b + i + 1) % m;
            at
        })
    }

    pub fn insert(&mut self, key: &Digest) {
        if self.m == 0 {
            return;
        }
        let idx: Vec<u64> = self.probes(key).collect();
        for i in idx {
            self.bits[(i / 8) as usize] |= 1 << (i % 8);
        }
    }

    pub fn contains(&self, key: &Digest) -> bool {
        self.m != 0
            && self
                .probes(key)
                .all(|i| self.bits[(i / 8) as usize] & (1 << (i % 8)) != 0)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
    pub fn m(&self) -> u64 {
        self.m
    }
    pub fn k(&self) -> u32 {
        self.k
    }
    pub fn n(&self) -> u64 {
        self.n
    }
    pub fn salt(&self) -> u64 {
        self.salt
    }
}

/// Key identifying one version of one node for a given round salt.
pub fn reconciliation_key(salt: u64, id: NodeId, record: &Digest) -> Digest {
    sha256(&[&salt.to_be_bytes(), &id.to_bytes(), record])
}

/// Filter over the keys of every node in the subtree at `root`; a root the
/// tree does not hold yields an empty filter.
pub fn bloom_for_subtree(
    tree: &SemanticTree,
    table: &DigestTable,
    root: NodeId,
    target_fpr: f64,
    salt: u64,
) -> Result<BloomSummary> {
    let ids = if tree.nodes().contains_key(&root) {
        tree.subtree_ids(root)
    } else {
        Vec::new()
    };
    let mut b = BloomSummary::with_capacity(ids.len() as u64, target_fpr, salt)?;
    for id in ids {
        b.insert(&reconciliation_key(salt, id, &table.entries[&id].record));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_follows_formula() {
        // n = 100, p = 0.01: ceil(100 * 4.60517 / 0.480453) = 959 = 7 * 137,
        // next prime 967; k = round(9.59 * ln 2) = 7
        assert_eq!(bloom_params(100, 0.01), (967, 7));
        // n = 1: ceil(9.585) = 10, next prime 11; k = round(10 * ln 2) = 7
        assert_eq!(bloom_params(1, 0.01), (11, 7));
        assert_eq!(bloom_params(0, 0.01), (0, 1));
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let b = BloomSummary::with_capacity(0, 0.01, 0).unwrap();
        assert!(b.bits().is_empty());
        assert!(!b.contains(&[7; 32]));
    }

    #[test]
    fn inserted_keys_are_members() {
        let mut b = BloomSummary::with_capacity(50, 0.01, 3).unwrap();
        let keys: Vec<Digest> = (0u32..50).map(|i| sha256(&[&i.to_be_bytes()])).collect();
        for k in &keys {
            b.insert(k);
        }
        assert!(keys.iter().all(|k| b.contains(k)));
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(BloomSummary::with_capacity(5, 0.5, 0).is_err());
        assert!(BloomSummary::with_capacity(5, 0.0, 0).is_err());
    }
}
