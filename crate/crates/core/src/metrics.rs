//! Operation counters.
//!
//! Tallies are kept per thread so that concurrent callers (and parallel test
//! threads) never observe each other's work. A caller that fans out across
//! threads aggregates the snapshots it collects.

use std::cell::Cell;

thread_local! {
    static SIMILARITY_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Point-in-time copy of the counters on the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub similarity_evals: u64,
}

impl MetricsSnapshot {
    /// Counter growth between `earlier` and `self`.
    pub fn since(&self, earlier: &MetricsSnapshot) -> MetricsSnapshot {
        MetricsSnapshot {
            similarity_evals: self.similarity_evals - earlier.similarity_evals,
        }
    }
}

pub fn snapshot() -> MetricsSnapshot {
    MetricsSnapshot {
        similarity_evals: SIMILARITY_EVALS.with(Cell::get),
    }
}

pub fn reset() {
    SIMILARITY_EVALS.with(|c| c.set(0));
}

pub(crate) fn add_similarity_evals(count: u64) {
    SIMILARITY_EVALS.with(|c| c.set(c.get() + count));
}
