//! Closed-form cost model for balanced trees.

use crate::error::{Error, Result};

/// Expected depth of a balanced tree holding `n` entities under `r` roots
/// with branching `t`: `ln n / ln(r t)`.
pub fn depth_estimate(n: u64, r: u64, t: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("entity count must be at least 1"));
    }
    let rt = r.saturating_mul(t);
    if rt < 2 {
        return Err(Error::invalid("R * T must be at least 2"));
    }
    Ok((n as f64).ln() / (rt as f64).ln())
}

/// Oracle calls predicted for one insertion: `R + A T d (d + 1) / 2`, where
/// `a` is the average fraction of nodes visited per level.
pub fn predicted_insert_calls(r: u64, a: f64, t: u64, d: u64) -> f64 {
    r as f64 + 0.5 * a * t as f64 * d as f64 * (d as f64 + 1.0)
}
