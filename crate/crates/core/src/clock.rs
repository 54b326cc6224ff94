//! Run-relative millisecond clocks.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Milliseconds since run start.
pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ms(&self) -> u64;
}

/// Wall-clock time elapsed since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }

    pub fn starting_at(start: Instant) -> Self {
        WallClock { start }
    }

    pub fn start(&self) -> Instant {
        self.start
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Wall clock that reads `offset_ms` at construction. Lets a separately
/// started OS process share the run clock of its parent.
#[derive(Debug, Clone, Copy)]
pub struct OffsetClock {
    wall: WallClock,
    offset_ms: u64,
}

impl OffsetClock {
    pub fn new(offset_ms: u64) -> Self {
        OffsetClock {
            wall: WallClock::new(),
            offset_ms,
        }
    }
}

impl Clock for OffsetClock {
    fn now_ms(&self) -> u64 {
        self.offset_ms + self.wall.now_ms()
    }
}

/// Manually advanced clock used by the simulated-time scheduler and tests.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}
