use serde::{Deserialize, Serialize};

/// A half-open interval `(lo, hi]` on the extended real line.
///
/// Unbounded ends use `-inf` / `+inf` sentinels, so left truncation at `t`
/// is `(t, inf]` and right censoring beyond `c` is `(c, inf]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    /// The whole real line.
    pub fn full() -> Self {
        Interval::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// The positive half line `(0, inf)`.
    pub fn positive() -> Self {
        Interval::new(0.0, f64::INFINITY)
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, y: f64) -> bool {
        y > self.lo && y <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    /// True when `self` is contained in `other` (up to empty-set degeneracy).
    pub fn subset_of(&self, other: &Interval) -> bool {
        self.is_empty() || (self.lo >= other.lo && self.hi <= other.hi)
    }

    pub fn is_full_line(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}]", self.lo, self.hi)
    }
}
