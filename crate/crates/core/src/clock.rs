use std::sync::atomic::{AtomicU64, Ordering};

/// Monotone logical clock owned by the data plane.
///
/// All timestamps in credentials, rate windows and transcript records are
/// ticks of this clock, never wall-clock time, so a run replays exactly.
#[derive(Debug, Default)]
pub struct LogicalClock {
    now: AtomicU64,
}

impl LogicalClock {
    pub fn new(start: u64) -> Self {
        Self {
            now: AtomicU64::new(start),
        }
    }

    pub fn now(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    /// Advances by `ticks` and returns the new time.
    pub fn advance(&self, ticks: u64) -> u64 {
        self.now.fetch_add(ticks, Ordering::SeqCst) + ticks
    }

    /// Moves the clock forward to `t`; never moves it backwards.
    pub fn advance_to(&self, t: u64) -> u64 {
        self.now.fetch_max(t, Ordering::SeqCst).max(t)
    }
}
