//! Wall-clock abstraction so experiment timings can be pinned in tests.

use std::sync::Arc;
use std::time::Instant;

/// Source of monotonic milliseconds. Swapping in [`FixedClock`] makes every
/// phase timing zero, which keeps traces byte-identical across runs.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Real monotonic clock, anchored at construction.
#[derive(Debug)]
pub struct MonotonicClock {
    start: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock {
            start: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Clock frozen at a fixed instant; every measured interval is zero.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Runs `f` and returns its result together with the elapsed milliseconds.
pub fn measure_elapsed<T>(clock: &Arc<dyn Clock>, f: impl FnOnce() -> T) -> (T, u64) {
    let start = clock.now_ms();
    let value = f();
    let elapsed = clock.now_ms().saturating_sub(start);
    (value, elapsed)
}
