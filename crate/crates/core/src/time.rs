//! Fixed-point simulation time.
//!
//! All timestamps are held as integer picoseconds so that loop-grid
//! arithmetic (`entry + k * period`) is exact and the three-decimal
//! nanosecond serialization used by record files round-trips without drift.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const PS_PER_NS: i64 = 1000;

/// A time or duration in nanoseconds, stored with picosecond resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeNs(i64);

impl TimeNs {
    pub const ZERO: TimeNs = TimeNs(0);

    /// Rounds to the nearest picosecond. Non-finite input maps to zero; use
    /// [`TimeNs::try_from_ns`] where that must be rejected.
    pub fn from_ns(ns: f64) -> Self {
        if ns.is_finite() {
            TimeNs((ns * PS_PER_NS as f64).round() as i64)
        } else {
            TimeNs::ZERO
        }
    }

    pub fn try_from_ns(ns: f64) -> Option<Self> {
        ns.is_finite().then(|| Self::from_ns(ns))
    }

    pub const fn from_ps(ps: i64) -> Self {
        TimeNs(ps)
    }

    pub fn from_us(us: f64) -> Self {
        Self::from_ns(us * 1000.0)
    }

    pub const fn ps(self) -> i64 {
        self.0
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / PS_PER_NS as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn abs(self) -> Self {
        TimeNs(self.0.abs())
    }

    /// Euclidean remainder; the result lies in `[0, period)`.
    pub fn rem_euclid(self, period: TimeNs) -> TimeNs {
        TimeNs(self.0.rem_euclid(period.0))
    }

    /// Distance from `self` to the nearest point of the grid `k * period`.
    pub fn grid_distance(self, period: TimeNs) -> TimeNs {
        let r = self.rem_euclid(period);
        TimeNs(r.0.min(period.0 - r.0))
    }

    /// Nearest integer number of periods, rounding half away from zero.
    pub fn round_div(self, period: TimeNs) -> i64 {
        (self.0 as f64 / period.0 as f64).round() as i64
    }

    pub fn is_multiple_of(self, step: TimeNs) -> bool {
        step.0 != 0 && self.0 % step.0 == 0
    }
}

impl fmt::Display for TimeNs {
    /// Exact three-decimal rendering, e.g. `2488.500`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", a / 1000, a % 1000)
    }
}

impl Add for TimeNs {
    type Output = TimeNs;
    fn add(self, rhs: TimeNs) -> TimeNs {
        TimeNs(self.0 + rhs.0)
    }
}

impl AddAssign for TimeNs {
    fn add_assign(&mut self, rhs: TimeNs) {
        self.0 += rhs.0;
    }
}

impl Sub for TimeNs {
    type Output = TimeNs;
    fn sub(self, rhs: TimeNs) -> TimeNs {
        TimeNs(self.0 - rhs.0)
    }
}

impl SubAssign for TimeNs {
    fn sub_assign(&mut self, rhs: TimeNs) {
        self.0 -= rhs.0;
    }
}

impl Neg for TimeNs {
    type Output = TimeNs;
    fn neg(self) -> TimeNs {
        TimeNs(-self.0)
    }
}

impl Mul<i64> for TimeNs {
    type Output = TimeNs;
    fn mul(self, rhs: i64) -> TimeNs {
        TimeNs(self.0 * rhs)
    }
}

impl Sum for TimeNs {
    fn sum<I: Iterator<Item = TimeNs>>(iter: I) -> TimeNs {
        iter.fold(TimeNs::ZERO, Add::add)
    }
}

impl Serialize for TimeNs {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_ns())
    }
}

impl<'de> Deserialize<'de> for TimeNs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ns = f64::deserialize(d)?;
        TimeNs::try_from_ns(ns).ok_or_else(|| serde::de::Error::custom("time must be finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_exact() {
        assert_eq!(TimeNs::from_ns(2488.5).to_string(), "2488.500");
        assert_eq!(TimeNs::from_ns(-10.3).to_string(), "-10.300");
        assert_eq!(TimeNs::from_ps(7).to_string(), "0.007");
    }

    #[test]
    fn grid_arithmetic_has_no_drift() {
        let tau = TimeNs::from_ns(20.3);
        let t = TimeNs::from_ns(30.0) + tau * 3;
        assert_eq!(t, TimeNs::from_ns(90.9));
        assert_eq!((t - TimeNs::from_ns(30.0)).rem_euclid(tau), TimeNs::ZERO);
    }

    #[test]
    fn grid_distance_wraps() {
        let tau = TimeNs::from_ns(20.3);
        assert_eq!(TimeNs::from_ns(20.0).grid_distance(tau), TimeNs::from_ns(0.3));
        assert_eq!(TimeNs::from_ns(-3.0).grid_distance(tau), TimeNs::from_ns(3.0));
    }

    #[test]
    fn serde_round_trip_through_ns() {
        let t = TimeNs::from_ns(114.4);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "114.4");
        let back: TimeNs = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
