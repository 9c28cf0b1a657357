//! Virtual time.
//!
//! All durations in the engine are accounted on a discrete-event timeline with
//! microsecond resolution. Nothing here ever reads the wall clock.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// An instant on the virtual timeline, in microseconds since simulation start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime(millis_to_micros(ms))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        let us = u64::try_from(rhs.as_micros()).unwrap_or(u64::MAX);
        SimTime(self.0.saturating_add(us))
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

/// Rounds a non-negative millisecond quantity to whole microseconds.
pub fn millis_to_micros(ms: f64) -> u64 {
    if !ms.is_finite() || ms <= 0.0 {
        return 0;
    }
    (ms * 1000.0).round() as u64
}

/// A `Duration` from fractional milliseconds, rounded to the microsecond.
pub fn millis(ms: f64) -> Duration {
    Duration::from_micros(millis_to_micros(ms))
}

/// Fractional milliseconds of a `Duration`.
pub fn as_millis_f64(d: Duration) -> f64 {
    d.as_micros() as f64 / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_round_trips() {
        let t = SimTime::from_millis_f64(1.5);
        assert_eq!(t.as_micros(), 1500);
        let later = t + millis(2.25);
        assert_eq!(later.as_micros(), 3750);
        assert_eq!(later - t, Duration::from_micros(2250));
        assert_eq!(t - later, Duration::ZERO);
    }

    #[test]
    fn negative_and_nan_millis_clamp_to_zero() {
        assert_eq!(millis(-3.0), Duration::ZERO);
        assert_eq!(millis(f64::NAN), Duration::ZERO);
    }
}
