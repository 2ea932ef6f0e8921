//! Time sources for budget enforcement and manifest timings.
//!
//! The engine never reads wall time directly; it asks a [`RunClock`]. The
//! counter clock advances a fixed amount per committed evaluation, which
//! makes budgets enforceable *and* manifests byte-reproducible — the mode
//! simulator-backed runs use. Wall time is for live endpoints; the manual
//! clock is for scripted tests.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// A monotonically advancing per-run time source.
pub trait RunClock: Send + Sync {
    fn elapsed(&self) -> Duration;
    /// Called once per committed evaluation.
    fn tick(&self);
}

#[derive(Debug, Clone)]
pub enum ClockSpec {
    /// Real wall-clock time, started when the run starts.
    Wall,
    /// Deterministic: elapsed = committed evaluations × `tick`.
    Counter { tick: Duration },
    /// Test-controlled: elapsed is whatever the holder sets it to.
    Manual(Arc<ManualClock>),
}

impl Default for ClockSpec {
    fn default() -> Self {
        // Wall time is unavailable on wasm; the deterministic counter is the
        // sensible default there.
        #[cfg(target_arch = "wasm32")]
        {
            ClockSpec::Counter {
                tick: Duration::from_millis(1),
            }
        }
        #[cfg(not(target_arch = "wasm32"))]
        {
            ClockSpec::Wall
        }
    }
}

impl ClockSpec {
    pub fn counter_ms(ms: u64) -> Self {
        ClockSpec::Counter {
            tick: Duration::from_millis(ms),
        }
    }

    /// Starts a fresh clock for one run. A manual clock is shared, not
    /// restarted, so tests keep control of it.
    pub fn start(&self) -> Arc<dyn RunClock> {
        match self {
            ClockSpec::Wall => Arc::new(WallClock::start()),
            ClockSpec::Counter { tick } => Arc::new(CounterClock {
                ticks: AtomicU64::new(0),
                per_tick: *tick,
            }),
            ClockSpec::Manual(clock) => Arc::clone(clock) as Arc<dyn RunClock>,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, ClockSpec::Wall)
    }
}

struct WallClock {
    #[cfg(not(target_arch = "wasm32"))]
    started: std::time::Instant,
}

impl WallClock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            started: std::time::Instant::now(),
        }
    }
}

impl RunClock for WallClock {
    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.started.elapsed()
        }
        #[cfg(target_arch = "wasm32")]
        {
            Duration::ZERO
        }
    }

    fn tick(&self) {}
}

struct CounterClock {
    ticks: AtomicU64,
    per_tick: Duration,
}

impl RunClock for CounterClock {
    fn elapsed(&self) -> Duration {
        self.per_tick * self.ticks.load(Ordering::SeqCst) as u32
    }

    fn tick(&self) {
        self.ticks.fetch_add(1, Ordering::SeqCst);
    }
}

/// Externally driven clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }

    pub fn set(&self, to: Duration) {
        *self.now.lock().unwrap() = to;
    }
}

impl RunClock for ManualClock {
    fn elapsed(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn tick(&self) {}
}
