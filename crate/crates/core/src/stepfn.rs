//! Exact step functions on `(0,1)` or `(0,∞)` and their decreasing rearrangement.
//!
//! A [`StepFunction`] is a finite list of open pieces `(t_{i-1}, t_i)` with
//! rational values plus, on the semi-axis, a constant tail on `(t_n, ∞)`.
//! Every constructor returns the canonical form: no zero-length pieces, no
//! two neighbours with the same value, and on the semi-axis no trailing piece
//! equal to the tail. Structural equality is therefore function equality.
//!
//! The distribution function uses strict level sets, `d_f(s) = m{|f| > s}`,
//! which pairs with the right-continuous rearrangement
//! `f*(t) = inf{s : d_f(s) <= t}`. On the semi-axis a tail of modulus `v`
//! swallows every piece with modulus `<= v`: those levels have infinite
//! distribution and never show up among the finite pieces of `f*`.

use std::fmt;

use num::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion};
use crate::rational::{fmt_q, one, parse_q, qmax, zero, Ext, Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainKind {
    #[serde(rename = "unit")]
    UnitInterval,
    #[serde(rename = "semiaxis")]
    SemiAxis,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::UnitInterval => f.write_str("unit"),
            DomainKind::SemiAxis => f.write_str("semiaxis"),
        }
    }
}

/// One open piece `(lo, hi)` carrying a constant value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Piece {
    pub lo: Q,
    pub hi: Q,
    pub value: Q,
}

impl Piece {
    pub fn new(lo: Q, hi: Q, value: Q) -> Self {
        Piece { lo, hi, value }
    }

    pub fn len(&self) -> Q {
        &self.hi - &self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StepFunction {
    domain: DomainKind,
    breakpoints: Vec<Q>,
    values: Vec<Q>,
    tail: Option<Q>,
}

impl StepFunction {
    /// Validates and canonicalizes raw breakpoint/value data.
    pub fn new(domain: DomainKind, breakpoints: Vec<Q>, values: Vec<Q>, tail: Option<Q>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::domain(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if !breakpoints[0].is_zero() {
            return Err(Error::domain("first breakpoint must be 0"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        match domain {
            DomainKind::UnitInterval => {
                if tail.is_some() {
                    return Err(Error::domain("unit-interval functions carry no tail"));
                }
                if values.is_empty() || breakpoints.last() != Some(&one()) {
                    return Err(Error::domain("unit-interval breakpoints must end at 1"));
                }
            }
            DomainKind::SemiAxis => {
                if tail.is_none() {
                    return Err(Error::domain("semi-axis functions need a tail value"));
                }
            }
        }
        let pieces = breakpoints
            .windows(2)
            .zip(values)
            .map(|(w, v)| Piece::new(w[0].clone(), w[1].clone(), v))
            .collect();
        Ok(Self::canonical(domain, pieces, tail))
    }

    /// Builds from contiguous pieces starting at 0. Zero-length pieces are dropped.
    pub fn from_pieces(domain: DomainKind, pieces: Vec<Piece>, tail: Option<Q>) -> Result<Self> {
        let pieces: Vec<Piece> = pieces.into_iter().filter(|p| !p.is_empty()).collect();
        let mut bps = vec![zero()];
        let mut vals = Vec::with_capacity(pieces.len());
        for p in pieces {
            if &p.lo != bps.last().unwrap() {
                return Err(Error::domain(format!("pieces not contiguous at {}", p.lo)));
            }
            bps.push(p.hi);
            vals.push(p.value);
        }
        Self::new(domain, bps, vals, tail)
    }

    fn canonical(domain: DomainKind, pieces: Vec<Piece>, tail: Option<Q>) -> Self {
        let mut merged: Vec<Piece> = Vec::with_capacity(pieces.len());
        for p in pieces.into_iter().filter(|p| !p.is_empty()) {
            match merged.last_mut() {
                Some(last) if last.value == p.value => last.hi = p.hi,
                _ => merged.push(p),
            }
        }
        if let Some(t) = &tail {
            while merged.last().is_some_and(|p| &p.value == t) {
                merged.pop();
            }
        }
        let mut breakpoints = vec![zero()];
        let mut values = Vec::with_capacity(merged.len());
        for p in merged {
            breakpoints.push(p.hi);
            values.push(p.value);
        }
        StepFunction { domain, breakpoints, values, tail }
    }

    pub fn unit(breakpoints: Vec<Q>, values: Vec<Q>) -> Result<Self> {
        Self::new(DomainKind::UnitInterval, breakpoints, values, None)
    }

    pub fn semiaxis(breakpoints: Vec<Q>, values: Vec<Q>, tail: Q) -> Result<Self> {
        Self::new(DomainKind::SemiAxis, breakpoints, values, Some(tail))
    }

    /// Equal-width pieces on `(0,1)`.
    pub fn uniform_unit(values: Vec<Q>) -> Self {
        let n = values.len().max(1) as i64;
        let bps = (0..=n).map(|i| crate::rational::qr(i, n)).collect();
        let values = if values.is_empty() { vec![zero()] } else { values };
        Self::unit(bps, values).expect("uniform grid is valid")
    }

    pub fn constant(domain: DomainKind, v: Q) -> Self {
        match domain {
            DomainKind::UnitInterval => Self::unit(vec![zero(), one()], vec![v]).unwrap(),
            DomainKind::SemiAxis => Self::semiaxis(vec![zero()], vec![], v).unwrap(),
        }
    }

    pub fn zero(domain: DomainKind) -> Self {
        Self::constant(domain, zero())
    }

    /// Indicator of a finite interval union (clipped to the domain).
    pub fn indicator(domain: DomainKind, set: &IntervalUnion) -> Result<Self> {
        let end = match domain {
            DomainKind::UnitInterval => one(),
            DomainKind::SemiAxis => set.sup().cloned().unwrap_or_else(zero),
        };
        if domain == DomainKind::UnitInterval && set.sup().is_some_and(|s| s > &end) {
            return Err(Error::domain("set exceeds the unit interval"));
        }
        let mut pieces = Vec::new();
        let mut cur = zero();
        for p in set.parts() {
            pieces.push(Piece::new(cur.clone(), p.lo.clone(), zero()));
            pieces.push(Piece::new(p.lo.clone(), p.hi.clone(), one()));
            cur = p.hi.clone();
        }
        pieces.push(Piece::new(cur, qmax(&end, &zero()), zero()));
        let tail = (domain == DomainKind::SemiAxis).then(zero);
        Self::from_pieces(domain, pieces, tail)
    }

    pub fn domain(&self) -> DomainKind {
        self.domain
    }

    pub fn breakpoints(&self) -> &[Q] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Q] {
        &self.values
    }

    pub fn tail(&self) -> Option<&Q> {
        self.tail.as_ref()
    }

    /// Tail value, `0` on the unit interval.
    pub fn tail_value(&self) -> Q {
        self.tail.clone().unwrap_or_else(zero)
    }

    /// Last breakpoint (1 on the unit interval).
    pub fn end(&self) -> &Q {
        self.breakpoints.last().unwrap()
    }

    pub fn num_pieces(&self) -> usize {
        self.values.len()
    }

    pub fn pieces(&self) -> Vec<Piece> {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| Piece::new(w[0].clone(), w[1].clone(), v.clone()))
            .collect()
    }

    /// Pieces split at every cut, covering `[0, max(end, cuts)]`; past `end`
    /// the tail value is used. On the unit interval cuts are clipped to `[0,1]`.
    pub fn refine(&self, cuts: &[Q]) -> Vec<Piece> {
        let mut pts: Vec<Q> = self.breakpoints.clone();
        for c in cuts {
            if c > &zero() && (self.domain == DomainKind::SemiAxis || c < &one()) {
                pts.push(c.clone());
            }
        }
        pts.sort();
        pts.dedup();
        let tail = self.tail_value();
        let mut out = Vec::with_capacity(pts.len());
        let mut idx = 0;
        for w in pts.windows(2) {
            while idx < self.values.len() && self.breakpoints[idx + 1] <= w[0] {
                idx += 1;
            }
            let v = if idx < self.values.len() { self.values[idx].clone() } else { tail.clone() };
            out.push(Piece::new(w[0].clone(), w[1].clone(), v));
        }
        out
    }

    fn check_point(&self, t: &Q) -> Result<()> {
        if t <= &zero() || (self.domain == DomainKind::UnitInterval && t >= &one()) {
            return Err(Error::domain(format!("point {t} outside the open domain")));
        }
        Ok(())
    }

    /// Value at `t`; at a breakpoint the piece to the right wins.
    pub fn evaluate(&self, t: &Q) -> Result<Q> {
        self.check_point(t)?;
        let i = self.breakpoints.partition_point(|b| b <= t);
        Ok(if i <= self.values.len() { self.values[i - 1].clone() } else { self.tail_value() })
    }

    /// `m{ |f| > s }`, infinite exactly when the tail exceeds `s`.
    pub fn distribution(&self, s: &Q) -> Ext {
        if self.tail.as_ref().is_some_and(|t| &t.abs() > s) {
            return Ext::Infinite;
        }
        Ext::Finite(
            self.pieces()
                .iter()
                .filter(|p| &p.value.abs() > s)
                .map(Piece::len)
                .sum(),
        )
    }

    /// Non-increasing right-continuous rearrangement of `|f|`.
    pub fn rearrange(&self) -> StepFunction {
        let level = self.tail.as_ref().map(|t| t.abs()).unwrap_or_else(zero);
        let mut parts: Vec<(Q, Q)> = self
            .pieces()
            .into_iter()
            .map(|p| (p.value.abs(), p.len()))
            .filter(|(v, _)| self.domain == DomainKind::UnitInterval || v > &level)
            .collect();
        parts.sort_by(|a, b| b.0.cmp(&a.0));
        let mut pieces = Vec::with_capacity(parts.len());
        let mut cur = zero();
        for (v, len) in parts {
            let hi = &cur + len;
            pieces.push(Piece::new(cur, hi.clone(), v));
            cur = hi;
        }
        let tail = (self.domain == DomainKind::SemiAxis).then_some(level);
        StepFunction::from_pieces(self.domain, pieces, tail).expect("rearrangement is well formed")
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] >= w[1])
            && match (&self.tail, self.values.last()) {
                (Some(t), Some(v)) => v >= t,
                _ => true,
            }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| !v.is_negative()) && !self.tail.as_ref().is_some_and(|t| t.is_negative())
    }

    /// `f = f*` (decreasing and non-negative).
    pub fn is_rearranged(&self) -> bool {
        self.is_nonnegative() && self.is_nonincreasing()
    }

    fn same_domain(&self, other: &StepFunction) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::domain(format!("mixed domains {} and {}", self.domain, other.domain)));
        }
        Ok(())
    }

    pub fn equimeasurable(&self, other: &StepFunction) -> Result<bool> {
        self.same_domain(other)?;
        Ok(self.rearrange() == other.rearrange())
    }

    /// Pointwise `op(f, g)` on the common refinement.
    pub fn zip_with(&self, other: &StepFunction, op: impl Fn(&Q, &Q) -> Q) -> Result<StepFunction> {
        self.same_domain(other)?;
        let cuts = other.breakpoints.clone();
        let mine = self.refine(&cuts);
        let theirs = other.refine(&self.breakpoints);
        debug_assert_eq!(mine.len(), theirs.len());
        let pieces = mine
            .into_iter()
            .zip(theirs)
            .map(|(a, b)| Piece::new(a.lo, a.hi, op(&a.value, &b.value)))
            .collect();
        let tail = match (&self.tail, &other.tail) {
            (Some(a), Some(b)) => Some(op(a, b)),
            _ => None,
        };
        StepFunction::from_pieces(self.domain, pieces, tail)
    }

    pub fn map(&self, op: impl Fn(&Q) -> Q) -> StepFunction {
        let pieces = self.pieces().into_iter().map(|p| Piece::new(p.lo, p.hi, op(&p.value))).collect();
        let tail = self.tail.as_ref().map(&op);
        StepFunction::from_pieces(self.domain, pieces, tail).expect("same layout")
    }

    /// `a·f + b·g`.
    pub fn combine(&self, other: &StepFunction, a: &Q, b: &Q) -> Result<StepFunction> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn add(&self, other: &StepFunction) -> Result<StepFunction> {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &StepFunction) -> Result<StepFunction> {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, c: &Q) -> StepFunction {
        self.map(|v| v * c)
    }

    pub fn abs(&self) -> StepFunction {
        self.map(|v| v.abs())
    }

    pub fn positive_part(&self) -> StepFunction {
        self.map(|v| qmax(v, &zero()))
    }

    /// `f·χ_A`.
    pub fn restrict(&self, set: &IntervalUnion) -> Result<StepFunction> {
        let ind = StepFunction::indicator(self.domain, set)?;
        self.zip_with(&ind, |x, y| x * y)
    }

    /// `∫_a^b f` over a finite window.
    pub fn integral_over(&self, iv: &Interval) -> Q {
        self.refine(&[iv.lo.clone(), iv.hi.clone()])
            .into_iter()
            .filter_map(|p| {
                let piece = Interval { lo: p.lo.clone(), hi: p.hi.clone() };
                piece.intersect(iv).map(|c| c.len() * &p.value)
            })
            .sum()
    }

    pub fn integral_on(&self, set: &IntervalUnion) -> Q {
        set.parts().iter().map(|iv| self.integral_over(iv)).sum()
    }

    /// `∫ f` over the whole domain, infinite if the tail is nonzero.
    pub fn integral(&self) -> Ext {
        if self.tail.as_ref().is_some_and(|t| !t.is_zero()) {
            return Ext::Infinite;
        }
        Ext::Finite(self.pieces().iter().map(|p| p.len() * &p.value).sum())
    }

    /// `∫ |f|`.
    pub fn mass(&self) -> Ext {
        self.abs().integral()
    }

    /// `ess sup |f|`.
    pub fn sup_abs(&self) -> Q {
        let m = self.values.iter().map(|v| v.abs()).max().unwrap_or_else(zero);
        qmax(&m, &self.tail.as_ref().map(|t| t.abs()).unwrap_or_else(zero))
    }

    /// Distinct absolute value levels, including the tail.
    pub fn levels(&self) -> Vec<Q> {
        let mut v: Vec<Q> = self.values.iter().map(|x| x.abs()).collect();
        if let Some(t) = &self.tail {
            v.push(t.abs());
        }
        v.sort();
        v.dedup();
        v
    }
}

impl fmt::Display for StepFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.pieces().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{} on ({}, {})", p.value, p.lo, p.hi)?;
        }
        if let Some(t) = &self.tail {
            write!(f, "; tail {t}")?;
        }
        write!(f, "]")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFunctionJson {
    domain: DomainKind,
    breakpoints: Vec<String>,
    values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<String>,
}

impl Serialize for StepFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StepFunctionJson {
            domain: self.domain,
            breakpoints: self.breakpoints.iter().map(fmt_q).collect(),
            values: self.values.iter().map(fmt_q).collect(),
            tail: self.tail.as_ref().map(fmt_q),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = StepFunctionJson::deserialize(d)?;
        let parse = |v: &[String]| -> std::result::Result<Vec<Q>, D::Error> {
            v.iter().map(|s| parse_q(s).map_err(D::Error::custom)).collect()
        };
        let bps = parse(&raw.breakpoints)?;
        let vals = parse(&raw.values)?;
        let tail = raw.tail.as_deref().map(parse_q).transpose().map_err(D::Error::custom)?;
        let tail = match (raw.domain, tail) {
            (DomainKind::SemiAxis, None) => Some(zero()),
            (_, t) => t,
        };
        StepFunction::new(raw.domain, bps, vals, tail).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qr};

    fn halves(a: i64, b: i64) -> StepFunction {
        StepFunction::uniform_unit(vec![q(a), q(b)])
    }

    #[test]
    fn evaluate_uses_right_pieces() {
        let f = halves(3, 1);
        assert_eq!(f.evaluate(&qr(1, 4)).unwrap(), q(3));
        assert_eq!(f.evaluate(&qr(1, 2)).unwrap(), q(1));
        let g = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(2)], q(1)).unwrap();
        assert_eq!(g.evaluate(&q(7)).unwrap(), q(1));
        assert!(matches!(f.evaluate(&q(1)), Err(Error::Domain(_))));
        assert!(matches!(g.evaluate(&q(0)), Err(Error::Domain(_))));
    }

    #[test]
    fn distribution_examples() {
        let f = halves(3, 1);
        assert_eq!(f.distribution(&q(2)), Ext::Finite(qr(1, 2)));
        assert_eq!(f.distribution(&q(3)), Ext::Finite(q(0)));
        let g = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(2)], q(1)).unwrap();
        assert_eq!(g.distribution(&qr(1, 2)), Ext::Infinite);
    }

    #[test]
    fn rearrange_sorts_and_absorbs_tail() {
        let f = StepFunction::uniform_unit(vec![q(1), q(3), q(2)]);
        assert_eq!(f.rearrange(), StepFunction::uniform_unit(vec![q(3), q(2), q(1)]));
        let g = StepFunction::semiaxis(vec![q(0), q(1), q(2)], vec![q(3), qr(1, 2)], q(1)).unwrap();
        let want = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(3)], q(1)).unwrap();
        assert_eq!(g.rearrange(), want);
        let sorted = halves(3, 1);
        assert_eq!(sorted.rearrange(), sorted);
    }

    #[test]
    fn negative_values_rearrange_by_modulus() {
        let f = StepFunction::uniform_unit(vec![q(-3), q(1)]);
        assert_eq!(f.rearrange(), halves(3, 1));
    }

    #[test]
    fn canonical_merging() {
        let f = StepFunction::uniform_unit(vec![q(2), q(2), q(1)]);
        assert_eq!(f.num_pieces(), 2);
        let g = StepFunction::semiaxis(vec![q(0), q(1), q(2)], vec![q(3), q(1)], q(1)).unwrap();
        assert_eq!(g.breakpoints(), &[q(0), q(1)]);
        let c = StepFunction::constant(DomainKind::SemiAxis, q(5));
        assert_eq!(c.num_pieces(), 0);
    }

    #[test]
    fn equimeasurability() {
        let a = halves(2, 0);
        let b = halves(0, 2);
        assert!(a.equimeasurable(&b).unwrap());
        assert!(!StepFunction::constant(DomainKind::UnitInterval, q(1))
            .equimeasurable(&StepFunction::constant(DomainKind::UnitInterval, q(2)))
            .unwrap());
        let s = StepFunction::zero(DomainKind::SemiAxis);
        assert!(matches!(a.equimeasurable(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn combine_examples() {
        let f = StepFunction::uniform_unit(vec![q(3), q(2), q(1)]);
        let g = halves(5, 7);
        assert_eq!(f.combine(&g, &q(1), &q(0)).unwrap(), f);
        assert_eq!(f.sub(&f).unwrap(), StepFunction::zero(DomainKind::UnitInterval));
        let x = halves(4, 2);
        let y = halves(3, 3);
        assert_eq!(x.sub(&y).unwrap().positive_part(), halves(1, 0));
    }

    #[test]
    fn validation_errors() {
        assert!(StepFunction::unit(vec![q(0), qr(1, 2)], vec![q(1)]).is_err());
        assert!(StepFunction::unit(vec![q(0), q(1), q(1)], vec![q(1), q(2)]).is_err());
        assert!(StepFunction::new(DomainKind::SemiAxis, vec![q(0), q(1)], vec![q(1)], None).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"domain":"unit","breakpoints":["0","1/3","1"],"values":["3","1"]}"#;
        let f: StepFunction = serde_json::from_str(text).unwrap();
        assert_eq!(serde_json::to_string(&f).unwrap(), text);
        let text = r#"{"domain":"semiaxis","breakpoints":["0","1"],"values":["2"],"tail":"1"}"#;
        let g: StepFunction = serde_json::from_str(text).unwrap();
        assert_eq!(serde_json::to_string(&g).unwrap(), text);
    }

    #[test]
    fn integrals() {
        let f = StepFunction::uniform_unit(vec![q(3), q(2), q(1)]);
        assert_eq!(f.integral(), Ext::Finite(q(2)));
        let part = Interval::new(q(0), qr(1, 2)).unwrap();
        assert_eq!(f.integral_over(&part), q(1) + qr(1, 3));
        let g = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(2)], q(1)).unwrap();
        assert!(g.mass().is_infinite());
        assert_eq!(g.integral_over(&Interval::new(q(0), q(3)).unwrap()), q(4));
    }
}
