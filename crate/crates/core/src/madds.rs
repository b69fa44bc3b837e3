//! Global multiply-add counter.
//!
//! The conditional-weight apply and gradient paths report how many scalar
//! multiply-adds they actually perform, so dense and factored
//! parameterizations can be compared on measured work rather than on
//! asymptotic claims. The counter is a process-wide relaxed atomic: cheap,
//! thread-safe, and precise enough for coarse comparisons.

use std::sync::atomic::{AtomicU64, Ordering};

static COUNTER: AtomicU64 = AtomicU64::new(0);

/// Record `n` multiply-add operations.
#[inline]
pub fn add(n: u64) {
    COUNTER.fetch_add(n, Ordering::Relaxed);
}

/// Reset the counter to zero.
pub fn reset() {
    COUNTER.store(0, Ordering::Relaxed);
}

/// Total multiply-adds recorded since the last reset.
pub fn total() -> u64 {
    COUNTER.load(Ordering::Relaxed)
}
