use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::types::Tick;

/// Source of the current tick for a time-out manager.
pub trait Clock: Send {
    fn now(&self) -> Tick;
}

/// A shared tick counter that only moves when the owner advances it.
///
/// Clones observe the same counter, so a simulation can hand one to every
/// manager and step them all from a single place.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(tick: Tick) -> Self {
        Self {
            now: Arc::new(AtomicU64::new(tick)),
        }
    }

    pub fn now(&self) -> Tick {
        self.now.load(Ordering::SeqCst)
    }

    /// # Panics
    ///
    /// Panics if `tick` is earlier than the current value.
    pub fn advance_to(&self, tick: Tick) {
        let prev = self.now.swap(tick, Ordering::SeqCst);
        assert!(tick >= prev, "virtual clock moved backwards: {prev} -> {tick}");
    }

    pub fn advance_by(&self, ticks: Tick) {
        self.now.fetch_add(ticks, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Tick {
        VirtualClock::now(self)
    }
}

/// Wall-clock ticks since construction. Live mode only.
#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
    tick: Duration,
}

impl WallClock {
    pub fn new(tick: Duration) -> Self {
        assert!(!tick.is_zero(), "tick length must be non-zero");
        Self {
            origin: Instant::now(),
            tick,
        }
    }

    pub fn tick_length(&self) -> Duration {
        self.tick
    }
}

impl Clock for WallClock {
    fn now(&self) -> Tick {
        (self.origin.elapsed().as_nanos() / self.tick.as_nanos()) as Tick
    }
}
