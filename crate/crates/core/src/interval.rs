//! Closed rational intervals and finite unions of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{qmax, qmin, serde_q, zero, Q};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "serde_q")]
    pub lo: Q,
    #[serde(with = "serde_q")]
    pub hi: Q,
}

impl Interval {
    pub fn new(lo: Q, hi: Q) -> Result<Self> {
        if lo > hi || lo < zero() {
            return Err(Error::domain(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> Q {
        &self.hi - &self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = qmax(&self.lo, &other.lo);
        let hi = qmin(&self.hi, &other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub fn contains_open(&self, t: &Q) -> bool {
        &self.lo < t && t < &self.hi
    }
}

/// A finite union of disjoint closed intervals, kept sorted and merged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalUnion {
    parts: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion { parts: Vec::new() }
    }

    pub fn single(lo: Q, hi: Q) -> Result<Self> {
        Self::from_intervals(vec![Interval::new(lo, hi)?])
    }

    /// Sorts and merges touching pieces; rejects overlaps of positive length
    /// only when `strict` callers need it (see [`IntervalUnion::from_disjoint`]).
    pub fn from_intervals(mut parts: Vec<Interval>) -> Result<Self> {
        parts.retain(|p| !p.is_empty());
        parts.sort_by(|a, b| a.lo.cmp(&b.lo));
        let mut out: Vec<Interval> = Vec::with_capacity(parts.len());
        for p in parts {
            match out.last_mut() {
                Some(last) if p.lo <= last.hi => {
                    if p.hi > last.hi {
                        last.hi = p.hi;
                    }
                }
                _ => out.push(p),
            }
        }
        Ok(IntervalUnion { parts: out })
    }

    /// Like `from_intervals` but fails if two pieces overlap in positive measure.
    pub fn from_disjoint(mut parts: Vec<Interval>) -> Result<Self> {
        parts.retain(|p| !p.is_empty());
        parts.sort_by(|a, b| a.lo.cmp(&b.lo));
        for w in parts.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(Error::Invariant(format!(
                    "overlapping intervals [{}, {}] and [{}, {}]",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Self::from_intervals(parts)
    }

    pub fn parts(&self) -> &[Interval] {
        &self.parts
    }

    pub fn measure(&self) -> Q {
        self.parts.iter().map(Interval::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn sup(&self) -> Option<&Q> {
        self.parts.last().map(|p| &p.hi)
    }

    pub fn intersects(&self, other: &IntervalUnion) -> bool {
        self.parts
            .iter()
            .any(|a| other.parts.iter().any(|b| a.intersect(b).is_some()))
    }

    pub fn union(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut all = self.parts.clone();
        all.extend(other.parts.iter().cloned());
        Self::from_intervals(all).expect("union of valid intervals")
    }

    pub fn intersect_interval(&self, iv: &Interval) -> IntervalUnion {
        IntervalUnion {
            parts: self.parts.iter().filter_map(|p| p.intersect(iv)).collect(),
        }
    }

    /// Complement inside `[0, end]`.
    pub fn complement_within(&self, end: &Q) -> IntervalUnion {
        let mut out = Vec::new();
        let mut cur = zero();
        for p in &self.parts {
            if &p.lo >= end {
                break;
            }
            if p.lo > cur {
                out.push(Interval { lo: cur.clone(), hi: p.lo.clone() });
            }
            cur = qmax(&cur, &p.hi);
        }
        if &cur < end {
            out.push(Interval { lo: cur, hi: end.clone() });
        }
        IntervalUnion { parts: out }
    }

    /// All interval endpoints in increasing order.
    pub fn endpoints(&self) -> Vec<Q> {
        self.parts
            .iter()
            .flat_map(|p| [p.lo.clone(), p.hi.clone()])
            .collect()
    }
}
