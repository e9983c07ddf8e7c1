//! Session clocks.
//!
//! Components consume `session_time_ms` values handed to them; only the
//! driver owns a clock. Simulation uses [`VirtualClock`], the live
//! service plugs in a wall clock.

use std::sync::atomic::{AtomicU64, Ordering};

pub trait Clock {
    /// Milliseconds since the session epoch.
    fn now_ms(&self) -> u64;
}

/// Deterministic clock that only moves when told to.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            now: AtomicU64::new(start_ms),
        }
    }

    /// Jumps to `t_ms`. Panics if that would move time backwards.
    pub fn advance_to(&self, t_ms: u64) {
        let prev = self.now.swap(t_ms, Ordering::AcqRel);
        assert!(prev <= t_ms, "virtual clock moved backwards: {prev} -> {t_ms}");
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advances_only_on_request() {
        let c = VirtualClock::new(100);
        assert_eq!(c.now_ms(), 100);
        c.advance_to(350);
        assert_eq!(c.now_ms(), 350);
        c.advance_to(350);
        assert_eq!(c.now_ms(), 350);
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn refuses_to_rewind() {
        let c = VirtualClock::new(10);
        c.advance_to(5);
    }
}
