//! O(1) streaming accumulators for MTTF, MTTR and MLT.

use serde::{Deserialize, Serialize};

use super::{MarkovRates, ModelError};
use crate::alarm::DeviceHistory;

/// Count and integer sum of observed durations, in ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationSum {
    pub count: u64,
    pub sum: u64,
}

impl DurationSum {
    fn push(self, duration: u64) -> Result<Self, ModelError> {
        if duration == 0 {
            return Err(ModelError::NonPositiveDuration);
        }
        Ok(DurationSum {
            count: self.count + 1,
            sum: self.sum.checked_add(duration).ok_or(ModelError::Overflow)?,
        })
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }

    fn merge(self, other: DurationSum) -> Self {
        DurationSum {
            count: self.count + other.count,
            sum: self.sum.saturating_add(other.sum),
        }
    }
}

/// A completed interval observed for one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    /// Time spent active before a transient failure.
    Up(u64),
    /// Time spent transiently failed before recovering.
    Recovery(u64),
    /// Time active before a permanent failure.
    Lifetime(u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureStats {
    pub up: DurationSum,
    pub recovery: DurationSum,
    pub lifetime: DurationSum,
}

impl FailureStats {
    pub fn update(self, event: Interval) -> Result<Self, ModelError> {
        let mut next = self;
        match event {
            Interval::Up(d) => next.up = self.up.push(d)?,
            Interval::Recovery(d) => next.recovery = self.recovery.push(d)?,
            Interval::Lifetime(d) => next.lifetime = self.lifetime.push(d)?,
        }
        Ok(next)
    }

    pub fn mttf(&self) -> Option<f64> {
        self.up.mean()
    }

    pub fn mttr(&self) -> Option<f64> {
        self.recovery.mean()
    }

    pub fn mlt(&self) -> Option<f64> {
        self.lifetime.mean()
    }

    pub fn merge(&self, other: &FailureStats) -> FailureStats {
        FailureStats {
            up: self.up.merge(other.up),
            recovery: self.recovery.merge(other.recovery),
            lifetime: self.lifetime.merge(other.lifetime),
        }
    }

    /// Fold a device's log history into stats.
    ///
    /// Completed OK intervals count as up-time, closed ALARM runs as recovery
    /// times. A run still open at `log_end` that has lasted more than
    /// `persistent_after` ticks is taken as a permanent failure whose lifetime
    /// runs from the device's first row to the run start.
    pub fn from_history(
        history: &DeviceHistory,
        log_end: u64,
        persistent_after: u64,
    ) -> FailureStats {
        let mut stats = FailureStats::default();
        for &d in &history.up_intervals {
            if let Ok(s) = stats.update(Interval::Up(d)) {
                stats = s;
            }
        }
        for d in history.recovery_times() {
            if let Ok(s) = stats.update(Interval::Recovery(d)) {
                stats = s;
            }
        }
        if let Some(run) = history.open_run() {
            let elapsed = log_end.saturating_sub(run.start) + 1;
            if elapsed > persistent_after {
                if let Ok(s) = stats.update(Interval::Lifetime(run.start - history.first_tick)) {
                    stats = s;
                }
            }
        }
        stats
    }
}

/// `α = 1/MTTF`, `β = 1/MTTR`, `γ = 1/MLT`.
pub fn rates_from_stats(stats: &FailureStats) -> Result<MarkovRates, ModelError> {
    let mttf = stats.mttf().ok_or(ModelError::InsufficientData("up-time"))?;
    let mttr = stats.mttr().ok_or(ModelError::InsufficientData("recovery"))?;
    let mlt = stats.mlt().ok_or(ModelError::InsufficientData("lifetime"))?;
    MarkovRates::new(1.0 / mttf, 1.0 / mttr, 1.0 / mlt)
}
