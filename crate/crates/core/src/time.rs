//! Simulation time.
//!
//! Time is kept as integer ticks so that grid points `t0 + j·Δ` are hit
//! exactly by repeated elapses. One time unit is [`TICKS_PER_UNIT`] ticks,
//! which leaves room for the minimum elapse `ε = Δ/1000`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub const TICKS_PER_UNIT: i64 = 1000;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(pub i64);

impl Time {
    pub const ZERO: Time = Time(0);

    pub fn ticks(self) -> i64 {
        self.0
    }

    /// Whole time units.
    pub fn units(u: i64) -> Time {
        Time(u * TICKS_PER_UNIT)
    }

    /// Fractional time units, rounded to the nearest tick.
    pub fn from_units_f64(u: f64) -> Time {
        Time((u * TICKS_PER_UNIT as f64).round() as i64)
    }

    pub fn as_units_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }

    pub fn checked_add(self, other: Time) -> Option<Time> {
        self.0.checked_add(other.0).map(Time)
    }

    /// Smallest positive distance from `self` to a point of the grid
    /// `origin + j·step`, `j ∈ ℤ`.
    pub fn distance_to_next_grid(self, origin: Time, step: Time) -> Time {
        assert!(step.0 > 0, "grid step must be positive");
        let r = (origin.0 - self.0).rem_euclid(step.0);
        if r == 0 {
            step
        } else {
            Time(r)
        }
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, o: Time) -> Time {
        Time(self.0 + o.0)
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, o: Time) -> Time {
        Time(self.0 - o.0)
    }
}

impl Neg for Time {
    type Output = Time;
    fn neg(self) -> Time {
        Time(-self.0)
    }
}

impl Mul<i64> for Time {
    type Output = Time;
    fn mul(self, k: i64) -> Time {
        Time(self.0 * k)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (q, r) = (self.0.div_euclid(TICKS_PER_UNIT), self.0.rem_euclid(TICKS_PER_UNIT));
        if r == 0 {
            write!(f, "{q}")
        } else {
            write!(f, "{}", self.as_units_f64())
        }
    }
}

impl fmt::Debug for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{self}")
    }
}
