use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

/// Simulated time in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds a non-negative millisecond count to the nearest microsecond.
    pub fn from_ms(ms: f64) -> SimTime {
        debug_assert!(ms >= 0.0 && ms.is_finite());
        SimTime((ms * 1000.0).round() as u64)
    }

    pub fn as_ms(&self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn micros(&self) -> u64 {
        self.0
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}ms", self.0 / 1000, self.0 % 1000)
    }
}
