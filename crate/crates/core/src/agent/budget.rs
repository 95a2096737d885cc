use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Elapsed time since the run started.
pub trait Clock: Send + Sync {
    fn elapsed(&self) -> Duration;
}

#[derive(Debug)]
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Hand-driven clock for tests and simulations.
#[derive(Debug, Default)]
pub struct ManualClock(Mutex<Duration>);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) += by;
    }
}

impl Clock for ManualClock {
    fn elapsed(&self) -> Duration {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Wall-clock budget shared by all workers of one run.
///
/// An optional step may start only while the remaining budget exceeds
/// `not_started × reserve`, i.e. every question nobody has picked up yet
/// keeps its reserve. Mandatory first attempts never consult it.
pub struct BudgetGovernor<'c> {
    total: Duration,
    reserve: Duration,
    clock: &'c dyn Clock,
    not_started: Mutex<usize>,
}

impl<'c> BudgetGovernor<'c> {
    pub fn new(total: Duration, reserve: Duration, questions: usize, clock: &'c dyn Clock) -> Self {
        Self {
            total,
            reserve,
            clock,
            not_started: Mutex::new(questions),
        }
    }

    /// Marks one more question as picked up by a worker.
    pub fn start_question(&self) {
        let mut n = self.not_started.lock().unwrap_or_else(|e| e.into_inner());
        *n = n.saturating_sub(1);
    }

    /// Whether an optional step may start now. The check and the read of the
    /// pending count happen under one lock.
    pub fn allows_optional(&self) -> bool {
        let n = self.not_started.lock().unwrap_or_else(|e| e.into_inner());
        let remaining = self.total.saturating_sub(self.clock.elapsed());
        let reserved = self.reserve.saturating_mul(u32::try_from(*n).unwrap_or(u32::MAX));
        remaining > reserved
    }
}

/// Durations in config files are seconds, fractional allowed.
pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}
