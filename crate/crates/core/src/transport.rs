//! Measure-preserving maps, partial averaging and the approximators that
//! build convex combinations of rearrangements.

use std::collections::BTreeMap;

use num::{Integer, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dilation::{certificate, require_vanishing, Governing};
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion};
use crate::rational::{one, qmax, qmin, qr, to_f64, zero, Q};
use crate::spaces::{dilate, norm_f64, SpaceSpec};
use crate::stepfn::{DomainKind, Piece, StepFunction};

/// Disjoint finite-measure blocks; the rest of the domain is left alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<IntervalUnion>", into = "Vec<IntervalUnion>")]
pub struct AveragingScheme {
    blocks: Vec<IntervalUnion>,
}

impl TryFrom<Vec<IntervalUnion>> for AveragingScheme {
    type Error = Error;

    fn try_from(v: Vec<IntervalUnion>) -> Result<Self> {
        AveragingScheme::new(v)
    }
}

impl From<AveragingScheme> for Vec<IntervalUnion> {
    fn from(a: AveragingScheme) -> Self {
        a.blocks
    }
}

impl AveragingScheme {
    pub fn new(blocks: Vec<IntervalUnion>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            if !b.measure().is_positive() {
                return Err(Error::domain(format!("block {i} has zero measure")));
            }
            if blocks[i + 1..].iter().any(|c| c.intersects(b)) {
                return Err(Error::Invariant(format!("block {i} overlaps a later block")));
            }
        }
        Ok(AveragingScheme { blocks })
    }

    pub fn empty() -> Self {
        AveragingScheme { blocks: Vec::new() }
    }

    pub fn single(lo: Q, hi: Q) -> Result<Self> {
        AveragingScheme::new(vec![IntervalUnion::single(lo, hi)?])
    }

    pub fn blocks(&self) -> &[IntervalUnion] {
        &self.blocks
    }

    pub fn union(&self) -> IntervalUnion {
        self.blocks.iter().fold(IntervalUnion::empty(), |a, b| a.union(b))
    }

    fn check_domain(&self, domain: DomainKind) -> Result<()> {
        if domain == DomainKind::UnitInterval && self.blocks.iter().any(|b| b.sup().is_some_and(|s| s > &one())) {
            return Err(Error::domain("averaging block leaves the unit interval"));
        }
        Ok(())
    }
}

/// `P(f|𝒜)`: block means on each block, `f` elsewhere.
pub fn partial_average(f: &StepFunction, scheme: &AveragingScheme) -> Result<StepFunction> {
    scheme.check_domain(f.domain())?;
    if scheme.blocks.is_empty() {
        return Ok(f.clone());
    }
    let all = scheme.union();
    let mut g = f.sub(&f.restrict(&all)?)?;
    for b in &scheme.blocks {
        let mean = f.integral_on(b) / b.measure();
        let ind = StepFunction::indicator(f.domain(), b)?;
        g = g.combine(&ind, &one(), &mean)?;
    }
    Ok(g)
}

/// One translation `src → dst` of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MapPiece {
    pub src: Interval,
    pub dst: Interval,
}

impl MapPiece {
    fn shift(&self) -> Q {
        &self.dst.lo - &self.src.lo
    }
}

/// Piecewise translation, identity off the listed sources. Sources and
/// targets cover the same set.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<MapPiece>", into = "Vec<MapPiece>")]
pub struct MeasurePreservingMap {
    pieces: Vec<MapPiece>,
}

impl TryFrom<Vec<MapPiece>> for MeasurePreservingMap {
    type Error = Error;

    fn try_from(v: Vec<MapPiece>) -> Result<Self> {
        MeasurePreservingMap::new(v)
    }
}

impl From<MeasurePreservingMap> for Vec<MapPiece> {
    fn from(m: MeasurePreservingMap) -> Self {
        m.pieces
    }
}

impl MeasurePreservingMap {
    pub fn identity() -> Self {
        MeasurePreservingMap { pieces: Vec::new() }
    }

    pub fn new(pieces: Vec<MapPiece>) -> Result<Self> {
        for p in &pieces {
            if p.src.len() != p.dst.len() {
                return Err(Error::Invariant(format!("piece {}..{} changes length", p.src.lo, p.src.hi)));
            }
        }
        let pieces: Vec<MapPiece> = pieces.into_iter().filter(|p| !p.src.is_empty()).collect();
        let srcs = IntervalUnion::from_disjoint(pieces.iter().map(|p| p.src.clone()).collect())
            .map_err(|_| Error::Invariant("map sources overlap".into()))?;
        let dsts = IntervalUnion::from_disjoint(pieces.iter().map(|p| p.dst.clone()).collect())
            .map_err(|_| Error::Invariant("map targets overlap".into()))?;
        if srcs != dsts {
            return Err(Error::Invariant("map sources and targets cover different sets".into()));
        }
        Ok(MeasurePreservingMap { pieces: simplify(pieces) })
    }

    pub fn pieces(&self) -> &[MapPiece] {
        &self.pieces
    }

    pub fn is_identity(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let pieces = self.pieces.iter().map(|p| MapPiece { src: p.dst.clone(), dst: p.src.clone() }).collect();
        MeasurePreservingMap { pieces: simplify(pieces) }
    }

    /// Largest endpoint moved by the map.
    pub fn reach(&self) -> Q {
        self.pieces.iter().map(|p| p.src.hi.clone()).max().unwrap_or_else(zero)
    }

    /// Pieces covering `[0, w]`, identity pieces filling the gaps.
    fn total_on(&self, w: &Q) -> Vec<MapPiece> {
        let mut out = self.pieces.clone();
        let srcs = IntervalUnion::from_intervals(self.pieces.iter().map(|p| p.src.clone()).collect()).unwrap();
        for gap in srcs.complement_within(w).parts() {
            out.push(MapPiece { src: gap.clone(), dst: gap.clone() });
        }
        out.sort_by(|a, b| a.src.lo.cmp(&b.src.lo));
        out
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &MeasurePreservingMap) -> MeasurePreservingMap {
        if self.is_identity() {
            return first.clone();
        }
        if first.is_identity() {
            return self.clone();
        }
        let w = qmax(&self.reach(), &first.reach());
        let a = first.total_on(&w);
        let b = self.total_on(&w);
        let mut out = Vec::new();
        for p in &a {
            let d1 = p.shift();
            let start = b.partition_point(|q| q.src.hi <= p.dst.lo);
            for q in &b[start..] {
                if q.src.lo >= p.dst.hi {
                    break;
                }
                let lo = qmax(&q.src.lo, &p.dst.lo);
                let hi = qmin(&q.src.hi, &p.dst.hi);
                if lo >= hi {
                    continue;
                }
                let d2 = q.shift();
                out.push(MapPiece {
                    src: Interval { lo: &lo - &d1, hi: &hi - &d1 },
                    dst: Interval { lo: &lo + &d2, hi: &hi + &d2 },
                });
            }
        }
        MeasurePreservingMap { pieces: simplify(out) }
    }

    /// Image of a point.
    pub fn apply_point(&self, t: &Q) -> Q {
        for p in &self.pieces {
            if &p.src.lo <= t && t < &p.src.hi {
                return t + p.shift();
            }
        }
        t.clone()
    }
}

/// Sorts by source, drops identity pieces and merges contiguous translations.
fn simplify(mut pieces: Vec<MapPiece>) -> Vec<MapPiece> {
    pieces.retain(|p| !p.src.is_empty() && p.src.lo != p.dst.lo);
    pieces.sort_by(|a, b| a.src.lo.cmp(&b.src.lo));
    let mut out: Vec<MapPiece> = Vec::with_capacity(pieces.len());
    for p in pieces {
        if let Some(last) = out.last_mut() {
            if last.src.hi == p.src.lo && last.dst.hi == p.dst.lo {
                last.src.hi = p.src.hi;
                last.dst.hi = p.dst.hi;
                continue;
            }
        }
        out.push(p);
    }
    out
}

/// Pairs consecutive source intervals with consecutive destination
/// intervals of the same total length, splitting both as needed.
pub fn pair_up(src: &[Interval], dst: &[Interval]) -> Result<Vec<MapPiece>> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut s_lo = src.first().map(|s| s.lo.clone());
    let mut d_lo = dst.first().map(|d| d.lo.clone());
    while i < src.len() && j < dst.len() {
        let a = s_lo.clone().unwrap();
        let b = d_lo.clone().unwrap();
        let ls = &src[i].hi - &a;
        let ld = &dst[j].hi - &b;
        let l = qmin(&ls, &ld);
        if l.is_positive() {
            out.push(MapPiece { src: Interval { lo: a.clone(), hi: &a + &l }, dst: Interval { lo: b.clone(), hi: &b + &l } });
        }
        s_lo = Some(&a + &l);
        d_lo = Some(&b + &l);
        if l == ls {
            i += 1;
            s_lo = src.get(i).map(|s| s.lo.clone());
        }
        if l == ld {
            j += 1;
            d_lo = dst.get(j).map(|d| d.lo.clone());
        }
    }
    let rest_s: Q = src[i.min(src.len())..].iter().map(|s| s.len()).sum();
    let rest_d: Q = dst[j.min(dst.len())..].iter().map(|d| d.len()).sum();
    if rest_s.is_positive() || rest_d.is_positive() {
        return Err(Error::Invariant("paired interval lists differ in length".into()));
    }
    Ok(out)
}

/// `f ∘ γ^{-1}`: the content of each source moves to its target.
pub fn apply_map(f: &StepFunction, gamma: &MeasurePreservingMap) -> Result<StepFunction> {
    if gamma.is_identity() {
        return Ok(f.clone());
    }
    if f.domain() == DomainKind::UnitInterval && gamma.reach() > one() {
        return Err(Error::domain("map leaves the unit interval"));
    }
    let mut cuts: Vec<Q> = Vec::with_capacity(gamma.pieces.len() * 2);
    for p in &gamma.pieces {
        cuts.push(p.src.lo.clone());
        cuts.push(p.src.hi.clone());
    }
    let base = f.refine(&cuts);
    let moved = IntervalUnion::from_intervals(gamma.pieces.iter().map(|p| p.src.clone()).collect())?;
    let mut out: Vec<Piece> = Vec::with_capacity(base.len() + gamma.pieces.len());
    let mut m = 0;
    let parts = moved.parts();
    for p in &base {
        while m < parts.len() && parts[m].hi <= p.lo {
            m += 1;
        }
        let inside = m < parts.len() && parts[m].lo <= p.lo && p.hi <= parts[m].hi;
        if !inside {
            out.push(p.clone());
        }
    }
    for mp in &gamma.pieces {
        let d = mp.shift();
        let start = base.partition_point(|p| p.hi <= mp.src.lo);
        for p in &base[start..] {
            if p.lo >= mp.src.hi {
                break;
            }
            out.push(Piece::new(&p.lo + &d, &p.hi + &d, p.value.clone()));
        }
    }
    out.sort_by(|a, b| a.lo.cmp(&b.lo));
    StepFunction::from_pieces(f.domain(), out, f.tail().cloned())
}

/// Where a term of a convex combination comes from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub base: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MeasurePreservingMap>,
    /// `β` when the term rearranges `x*χ_[0,β]`.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::rational::serde_qopt")]
    pub truncation: Option<Q>,
    /// `β` when the term rearranges `x*χ_[0,β] - x*χ_[β,1]`.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::rational::serde_qopt")]
    pub sign_split: Option<Q>,
    /// `-1` when the whole term is negated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<i8>,
    /// Set `F` when the term is `base·χ_F`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction: Option<IntervalUnion>,
    /// Scheme when the term is `P(base|𝒜)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaging: Option<AveragingScheme>,
    /// Sign pattern `u` when the term is `u·(...)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<StepFunction>,
}

impl Provenance {
    pub fn base(name: &str) -> Self {
        Provenance { base: name.to_string(), ..Default::default() }
    }

    pub fn mapped(name: &str, map: MeasurePreservingMap) -> Self {
        Provenance { base: name.to_string(), map: Some(map), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    #[serde(with = "crate::rational::serde_q")]
    pub weight: Q,
    pub function: StepFunction,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCombination")]
pub struct ConvexCombination {
    terms: Vec<Term>,
}

#[derive(Deserialize)]
struct RawCombination {
    terms: Vec<Term>,
}

impl TryFrom<RawCombination> for ConvexCombination {
    type Error = Error;

    fn try_from(r: RawCombination) -> Result<Self> {
        ConvexCombination::new(r.terms)
    }
}

impl ConvexCombination {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Invariant("empty convex combination".into()));
        }
        if terms.iter().any(|t| !t.weight.is_positive()) {
            return Err(Error::Invariant("convex weights must be positive".into()));
        }
        let total: Q = terms.iter().map(|t| &t.weight).sum();
        if total != one() {
            return Err(Error::Invariant(format!("convex weights sum to {total}")));
        }
        let d = terms[0].function.domain();
        if terms.iter().any(|t| t.function.domain() != d) {
            return Err(Error::domain("terms live on different domains"));
        }
        Ok(ConvexCombination { terms })
    }

    pub fn single(function: StepFunction, provenance: Provenance) -> Self {
        ConvexCombination { terms: vec![Term { weight: one(), function, provenance }] }
    }

    /// Equal weights `1/n`.
    pub fn uniform(items: Vec<(StepFunction, Provenance)>) -> Result<Self> {
        let w = qr(1, items.len().max(1) as i64);
        Self::new(items.into_iter().map(|(function, provenance)| Term { weight: w.clone(), function, provenance }).collect())
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn weight_sum(&self) -> Q {
        self.terms.iter().map(|t| &t.weight).sum()
    }

    /// Merges terms with identical functions, keeping the first provenance.
    pub fn merge_identical(self) -> Self {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut out: Vec<Term> = Vec::new();
        for t in self.terms {
            let key = serde_json::to_string(&t.function).expect("serializable");
            match index.get(&key) {
                Some(&i) => out[i].weight += t.weight,
                None => {
                    index.insert(key, out.len());
                    out.push(t);
                }
            }
        }
        ConvexCombination { terms: out }
    }

    /// `Σ w_i f_i`.
    pub fn evaluate(&self) -> Result<StepFunction> {
        weighted_sum(self.terms.iter().map(|t| (&t.weight, &t.function)))
    }
}

/// `Σ w_i f_i` in one sweep over the merged breakpoint grid.
pub fn weighted_sum<'a>(items: impl IntoIterator<Item = (&'a Q, &'a StepFunction)>) -> Result<StepFunction> {
    let items: Vec<(&Q, &StepFunction)> = items.into_iter().collect();
    let Some(first) = items.first() else {
        return Err(Error::Invariant("empty sum".into()));
    };
    let domain = first.1.domain();
    if items.iter().any(|(_, f)| f.domain() != domain) {
        return Err(Error::domain("mixed domains in weighted sum"));
    }
    let mut grid: Vec<Q> = items.iter().flat_map(|(_, f)| f.breakpoints().iter().cloned()).collect();
    grid.sort();
    grid.dedup();
    let mut diff = vec![zero(); grid.len()];
    let mut tail = zero();
    for (w, f) in &items {
        for p in f.pieces() {
            if p.value.is_zero() {
                continue;
            }
            let wv = *w * &p.value;
            let i = grid.binary_search(&p.lo).unwrap();
            let j = grid.binary_search(&p.hi).unwrap();
            diff[i] += &wv;
            diff[j] -= &wv;
        }
        if let Some(t) = f.tail() {
            if !t.is_zero() {
                let wt = *w * t;
                let i = grid.binary_search(f.end()).unwrap();
                diff[i] += &wt;
                tail += wt;
            }
        }
    }
    let mut pieces = Vec::with_capacity(grid.len());
    let mut acc = zero();
    for k in 0..grid.len().saturating_sub(1) {
        acc += &diff[k];
        pieces.push(Piece::new(grid[k].clone(), grid[k + 1].clone(), acc.clone()));
    }
    let tail = (domain == DomainKind::SemiAxis).then_some(tail);
    StepFunction::from_pieces(domain, pieces, tail)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RyffCertificate {
    /// `apply_map(y*, γ) == y` was checked exactly.
    pub round_trip: bool,
}

/// `γ` with `y = y* ∘ γ^{-1}` in the sense of [`apply_map`].
pub fn ryff_factorize(y: &StepFunction) -> Result<(MeasurePreservingMap, RyffCertificate)> {
    if !y.is_nonnegative() {
        return Err(Error::pre("factorization needs a non-negative function"));
    }
    let level = y.tail_value();
    let semi = y.domain() == DomainKind::SemiAxis;
    let pieces = y.pieces();
    if semi && pieces.iter().any(|p| p.value < level) {
        return Err(Error::Unsupported(
            "semi-axis function takes values below its tail; use truncations instead".into(),
        ));
    }
    let mut top: Vec<&Piece> = pieces.iter().filter(|p| !semi || p.value > level).collect();
    top.sort_by(|a, b| b.value.cmp(&a.value));
    let rest: Vec<&Piece> = pieces.iter().filter(|p| semi && p.value == level).collect();
    let mut cur = zero();
    let mut maps = Vec::with_capacity(pieces.len());
    for p in top.into_iter().chain(rest) {
        let hi = &cur + p.len();
        maps.push(MapPiece { src: Interval { lo: cur.clone(), hi: hi.clone() }, dst: Interval { lo: p.lo.clone(), hi: p.hi.clone() } });
        cur = hi;
    }
    let gamma = MeasurePreservingMap::new(maps)?;
    let ok = apply_map(&y.rearrange(), &gamma)? == *y;
    if !ok {
        return Err(Error::Invariant("factorization round trip failed".into()));
    }
    Ok((gamma, RyffCertificate { round_trip: true }))
}

/// A block laid out on `[0, m)` by concatenating its parts.
struct Chart<'a> {
    parts: &'a [Interval],
    starts: Vec<Q>,
    total: Q,
}

impl<'a> Chart<'a> {
    fn new(block: &'a IntervalUnion) -> Self {
        let parts = block.parts();
        let mut starts = Vec::with_capacity(parts.len());
        let mut acc = zero();
        for p in parts {
            starts.push(acc.clone());
            acc += p.len();
        }
        Chart { parts, starts, total: acc }
    }

    /// `[a, b)` in chart coordinates as domain intervals, in order.
    fn to_domain(&self, a: &Q, b: &Q) -> Vec<Interval> {
        let mut out = Vec::new();
        for (p, s) in self.parts.iter().zip(&self.starts) {
            let e = s + p.len();
            let lo = qmax(a, s);
            let hi = qmin(b, &e);
            if lo < hi {
                out.push(Interval { lo: &p.lo + (&lo - s), hi: &p.lo + (&hi - s) });
            }
        }
        out
    }

    /// Wrapped range `[a, a + len)` modulo `total`.
    fn to_domain_wrapped(&self, a: &Q, len: &Q) -> Vec<Interval> {
        let end = a + len;
        if end <= self.total {
            self.to_domain(a, &end)
        } else {
            let mut v = self.to_domain(a, &self.total);
            v.extend(self.to_domain(&zero(), &(end - &self.total)));
            v
        }
    }
}

/// Pieces of `f` inside `block`, in domain order.
fn cells(f: &StepFunction, block: &IntervalUnion) -> Vec<Piece> {
    let ends = block.endpoints();
    f.refine(&ends)
        .into_iter()
        .filter(|p| block.parts().iter().any(|iv| iv.lo <= p.lo && p.hi <= iv.hi))
        .collect()
}

/// Sorted cells of `f` on a block with their chart slots.
fn sorted_slots(f: &StepFunction, block: &IntervalUnion) -> Vec<(Interval, Q, Q)> {
    let mut cs = cells(f, block);
    cs.sort_by(|a, b| b.value.cmp(&a.value));
    let mut acc = zero();
    cs.into_iter()
        .map(|p| {
            let start = acc.clone();
            acc += p.len();
            (Interval { lo: p.lo.clone(), hi: p.hi.clone() }, start, p.len())
        })
        .collect()
}

/// The `n` shift maps: on each block, sort the values and shift cyclically
/// by `i·m/n`.
pub fn shift_maps(f: &StepFunction, scheme: &AveragingScheme, n: u64) -> Result<Vec<MeasurePreservingMap>> {
    if n == 0 {
        return Err(Error::pre("shift count must be positive"));
    }
    scheme.check_domain(f.domain())?;
    let layouts: Vec<(Chart, Vec<(Interval, Q, Q)>)> =
        scheme.blocks.iter().map(|b| (Chart::new(b), sorted_slots(f, b))).collect();
    let mut maps = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut pieces = Vec::new();
        for (chart, slots) in &layouts {
            let delta = &chart.total * qr(i as i64, n as i64);
            for (src, start, len) in slots {
                let mut a = start - &delta;
                if a.is_negative() {
                    a += &chart.total;
                }
                let dst = chart.to_domain_wrapped(&a, len);
                pieces.extend(pair_up(std::slice::from_ref(src), &dst)?);
            }
        }
        maps.push(MeasurePreservingMap::new(pieces)?);
    }
    Ok(maps)
}

/// Smallest `n` for which the shift average reproduces `P(f|𝒜)` exactly.
pub fn exact_shift_n(f: &StepFunction, scheme: &AveragingScheme) -> Option<u64> {
    let mut n = num::BigInt::from(1);
    for b in &scheme.blocks {
        let m = b.measure();
        for (_, start, _) in sorted_slots(f, b) {
            let r = start / &m;
            n = n.lcm(r.denom());
        }
    }
    num::ToPrimitive::to_u64(&n)
}

/// `Σ_k (2/n)·‖σ_n(((f - c_k)χ_{A_k})*)·χ_[0,|A_k|]‖_E`, with `c_k` either 0
/// or the least value of `f` on `A_k` (both the average and the shifts fix
/// constants on a block), whichever is smaller.
///
/// The shifts act on the chart of a block as the standard shifts of (0,1),
/// and `h ↦ ‖σ_m h*‖_E` is a symmetric norm there, which gives the cut at `m`.
pub fn shift_bound(e: &SpaceSpec, f: &StepFunction, scheme: &AveragingScheme, n: u64) -> Result<f64> {
    let nq = Q::from_integer(n.into());
    let mut total = 0.0;
    for b in &scheme.blocks {
        let head = IntervalUnion::single(zero(), b.measure())?;
        let bound = |g: &StepFunction| -> Result<f64> { norm_f64(e, &dilate(&g.rearrange(), &nq)?.restrict(&head)?) };
        let part = f.restrict(b)?;
        let low = cells(f, b).into_iter().map(|p| p.value).min().unwrap_or_else(zero);
        let shifted = part.sub(&StepFunction::indicator(f.domain(), b)?.scale(&low))?;
        total += 2.0 / n as f64 * bound(&part)?.min(bound(&shifted)?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub n: u64,
    pub exact_n: Option<u64>,
    pub certified_bound: f64,
    pub measured_error: f64,
}

pub fn approx_average_by_shifts(
    e: &SpaceSpec,
    f: &StepFunction,
    scheme: &AveragingScheme,
    n: u64,
) -> Result<(ConvexCombination, ShiftReport)> {
    let maps = shift_maps(f, scheme, n)?;
    let mut items = Vec::with_capacity(maps.len());
    for m in maps {
        items.push((apply_map(f, &m)?, Provenance::mapped("x", m)));
    }
    let combo = ConvexCombination::uniform(items)?;
    let target = partial_average(f, scheme)?;
    let measured = norm_f64(e, &target.sub(&combo.evaluate()?)?)?;
    let report = ShiftReport {
        n,
        exact_n: exact_shift_n(f, scheme),
        certified_bound: shift_bound(e, f, scheme, n)?,
        measured_error: measured,
    };
    Ok((combo.merge_identical(), report))
}

/// Picks the shift count: the exact one when it fits, otherwise the
/// smallest power-of-two refinement whose certified bound meets `target`.
pub fn choose_shift_n(e: &SpaceSpec, f: &StepFunction, scheme: &AveragingScheme, target: f64, max_n: u64) -> Result<(u64, f64)> {
    if let Some(n) = exact_shift_n(f, scheme) {
        if n <= max_n {
            return Ok((n, 0.0));
        }
    }
    let mut n = 1u64;
    loop {
        let b = shift_bound(e, f, scheme, n)?;
        if b <= target {
            break;
        }
        if n >= max_n {
            return Err(Error::BudgetExceeded { achieved: b, target, terms: n as usize });
        }
        n = (n * 2).min(max_n);
    }
    // tighten between n/2 and n
    let (mut lo, mut hi) = (n / 2, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if shift_bound(e, f, scheme, mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, shift_bound(e, f, scheme, hi)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionReport {
    /// The measure-preserving image of `fχ_A` being approximated.
    pub target: StepFunction,
    pub certified_bound: f64,
    pub measured_error: f64,
}

/// `n` rearrangements of `f` whose average approximates an image of `fχ_A`:
/// `f|A` is packed at the origin and `f|A^c` lands in one of `n` congruent
/// slots after it.
pub fn approx_restriction(
    e: &SpaceSpec,
    f: &StepFunction,
    set: &IntervalUnion,
    n: u64,
    override_flag: bool,
) -> Result<(ConvexCombination, RestrictionReport)> {
    if f.domain() != DomainKind::SemiAxis {
        return Err(Error::domain("restriction approximation lives on the semi-axis"));
    }
    if n == 0 {
        return Err(Error::pre("slot count must be positive"));
    }
    if !f.tail_value().is_zero() {
        return Err(Error::Unsupported("restriction approximation needs a function with tail 0".into()));
    }
    require_vanishing(&certificate(e, Governing::Phi, override_flag))?;
    let w = f.end().clone();
    let a_set = set.intersect_interval(&Interval { lo: zero(), hi: w.clone() });
    let c_set = a_set.complement_within(&w);
    let fc = f.restrict(&c_set)?;
    if fc.sup_abs().is_zero() {
        let target = f.restrict(&a_set)?;
        let report = RestrictionReport { target, certified_bound: 0.0, measured_error: 0.0 };
        return Ok((ConvexCombination::single(f.clone(), Provenance::base("x")), report));
    }
    let a = a_set.measure();
    let c = c_set.measure();
    let mut items = Vec::with_capacity(n as usize);
    let mut first_map = None;
    for i in 0..n {
        let iq = Q::from_integer(i.into());
        let mut pieces = pair_up(a_set.parts(), &[Interval { lo: zero(), hi: a.clone() }])?;
        let slot = Interval { lo: &a + &iq * &c, hi: &a + (&iq + one()) * &c };
        pieces.extend(pair_up(c_set.parts(), &[slot])?);
        if i > 0 {
            let gap = &iq * &c;
            pieces.extend(pair_up(&[Interval { lo: w.clone(), hi: &w + &gap }], &[Interval { lo: a.clone(), hi: &a + &gap }])?);
        }
        let gamma = MeasurePreservingMap::new(pieces)?;
        if i == 0 {
            first_map = Some(gamma.clone());
        }
        items.push((apply_map(f, &gamma)?, Provenance::mapped("x", gamma)));
    }
    let target = apply_map(&f.restrict(&a_set)?, first_map.as_ref().unwrap())?;
    let combo = ConvexCombination::uniform(items)?;
    let nq = Q::from_integer(n.into());
    let bound = norm_f64(e, &dilate(&fc.rearrange(), &nq)?)? / n as f64;
    let measured = norm_f64(e, &target.sub(&combo.evaluate()?)?)?;
    Ok((combo, RestrictionReport { target, certified_bound: bound, measured_error: measured }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: u32,
    pub terms: usize,
    /// `‖s_r - w_r‖_E` with `w_r = 2^{-r}y + (1-2^{-r})z`.
    pub target_error: f64,
    /// `|s_r - (s_{r-1}+z)/2| <= 2 s_{r-1}/n` on every cell.
    pub envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatedReport {
    pub rounds: Vec<RoundReport>,
    pub certified_bound: f64,
    pub measured_error: f64,
}

/// Convex combination of restrictions `yχ_F` approaching `z`, for `0 <= z <= y`.
///
/// Each round splits the cells by the level `i` with `(i-1)/n < z/s <= i/n`
/// (against the current average `s`) and keeps a cell in the first
/// `ceil((n+i)/2)` of `n` restrictions. Using `ceil` rather than one less
/// keeps `z <= s` so the rounds can be iterated.
pub fn approx_dominated(
    e: &SpaceSpec,
    y: &StepFunction,
    z: &StepFunction,
    n: u64,
    rounds: u32,
    override_flag: bool,
) -> Result<(ConvexCombination, DominatedReport)> {
    if y.domain() != z.domain() {
        return Err(Error::domain("mixed domains"));
    }
    if n == 0 {
        return Err(Error::pre("n must be positive"));
    }
    if !z.is_nonnegative() || !y.sub(z)?.is_nonnegative() {
        return Err(Error::pre("need 0 <= z <= y pointwise"));
    }
    if !y.tail_value().is_zero() {
        return Err(Error::Unsupported("dominated approximation needs y with tail 0".into()));
    }
    require_vanishing(&certificate(e, Governing::Phi, override_flag))?;
    let ys = y.refine(z.breakpoints());
    let zs = z.refine(y.breakpoints());
    let cells: Vec<(Interval, Q, Q)> = ys
        .into_iter()
        .zip(zs)
        .map(|(a, b)| (Interval { lo: a.lo, hi: a.hi }, a.value, b.value))
        .collect();
    let nc = cells.len();
    let nq = Q::from_integer(n.into());
    let mut combo: BTreeMap<Vec<bool>, Q> = BTreeMap::new();
    combo.insert(vec![true; nc], one());
    let coverage = |combo: &BTreeMap<Vec<bool>, Q>| -> Vec<Q> {
        let mut mu = vec![zero(); nc];
        for (mask, w) in combo {
            for (c, &b) in mask.iter().enumerate() {
                if b {
                    mu[c] += w;
                }
            }
        }
        mu
    };
    let as_fn = |vals: Vec<Q>| -> Result<StepFunction> {
        let pieces = cells.iter().zip(vals).map(|((iv, _, _), v)| Piece::new(iv.lo.clone(), iv.hi.clone(), v)).collect();
        StepFunction::from_pieces(y.domain(), pieces, y.tail().cloned())
    };
    let mut reports = Vec::new();
    let mut half_power = one();
    for r in 1..=rounds {
        let mu = coverage(&combo);
        let cur: Vec<Q> = cells.iter().zip(&mu).map(|((_, yc, _), m)| yc * m).collect();
        let counts: Vec<u64> = cells
            .iter()
            .zip(&cur)
            .map(|((_, _, zc), sc)| {
                if sc.is_zero() {
                    return n;
                }
                let rho = zc / sc;
                let i = crate::rational::ceil_u64(&(&rho * &nq)).unwrap_or(n).clamp(1, n);
                (n + i).div_ceil(2)
            })
            .collect();
        let mut next: BTreeMap<Vec<bool>, Q> = BTreeMap::new();
        let share = qr(1, n as i64);
        for (mask, w) in &combo {
            for k in 1..=n {
                let m: Vec<bool> = mask.iter().zip(&counts).map(|(&b, &c)| b && c >= k).collect();
                *next.entry(m).or_insert_with(zero) += w * &share;
            }
        }
        combo = next;
        let new_mu = coverage(&combo);
        let mut envelope_ok = true;
        for (c, (_, yc, zc)) in cells.iter().enumerate() {
            let s_new = yc * &new_mu[c];
            let mid = (&cur[c] + zc) / Q::from_integer(2.into());
            let gap = (&s_new - &mid).abs();
            if gap > &cur[c] * Q::from_integer(2.into()) / &nq || &s_new < zc {
                envelope_ok = false;
            }
        }
        half_power /= Q::from_integer(2.into());
        let s_fn = as_fn(cells.iter().zip(&new_mu).map(|((_, yc, _), m)| yc * m).collect())?;
        let w_r = y.combine(z, &half_power, &(one() - &half_power))?;
        reports.push(RoundReport {
            round: r,
            terms: combo.len(),
            target_error: norm_f64(e, &s_fn.sub(&w_r)?)?,
            envelope_ok,
        });
    }
    let mut terms = Vec::with_capacity(combo.len());
    for (mask, w) in combo {
        let f = as_fn(cells.iter().zip(&mask).map(|((_, yc, _), &b)| if b { yc.clone() } else { zero() }).collect())?;
        let set = IntervalUnion::from_intervals(
            cells.iter().zip(&mask).filter(|(_, &b)| b).map(|((iv, _, _), _)| iv.clone()).collect(),
        )?;
        terms.push(Term { weight: w, function: f, provenance: Provenance { restriction: Some(set), ..Provenance::base("y") } });
    }
    let combo = ConvexCombination::new(terms)?;
    let measured = norm_f64(e, &combo.evaluate()?.sub(z)?)?;
    let bound = to_f64(&half_power) * norm_f64(e, &y.sub(z)?)? + 4.0 / n as f64 * norm_f64(e, y)?;
    Ok((combo, DominatedReport { rounds: reports, certified_bound: bound, measured_error: measured }))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    const U: DomainKind = DomainKind::UnitInterval;
    const S: DomainKind = DomainKind::SemiAxis;

    fn thirds(a: i64, b: i64, c: i64) -> StepFunction {
        StepFunction::uniform_unit(vec![q(a), q(b), q(c)])
    }

    fn iv(a: Q, b: Q) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn averaging_examples() {
        let f = thirds(3, 2, 1);
        let a = AveragingScheme::single(q(0), qr(2, 3)).unwrap();
        let want = StepFunction::unit(vec![q(0), qr(2, 3), q(1)], vec![qr(5, 2), q(1)]).unwrap();
        assert_eq!(partial_average(&f, &a).unwrap(), want);
        let all = AveragingScheme::single(q(0), q(1)).unwrap();
        assert_eq!(partial_average(&f, &all).unwrap(), StepFunction::constant(U, q(2)));
        assert_eq!(partial_average(&f, &AveragingScheme::empty()).unwrap(), f);
        let out = AveragingScheme::single(q(0), q(2)).unwrap();
        assert!(matches!(partial_average(&f, &out), Err(Error::Domain(_))));
    }

    #[test]
    fn map_examples() {
        let f = StepFunction::uniform_unit(vec![q(3), q(1)]);
        assert_eq!(apply_map(&f, &MeasurePreservingMap::identity()).unwrap(), f);
        let swap = MeasurePreservingMap::new(vec![
            MapPiece { src: iv(q(0), qr(1, 2)), dst: iv(qr(1, 2), q(1)) },
            MapPiece { src: iv(qr(1, 2), q(1)), dst: iv(q(0), qr(1, 2)) },
        ])
        .unwrap();
        assert_eq!(apply_map(&f, &swap).unwrap(), StepFunction::uniform_unit(vec![q(1), q(3)]));
        let shift = MeasurePreservingMap::new(vec![
            MapPiece { src: iv(q(0), qr(2, 3)), dst: iv(qr(1, 3), q(1)) },
            MapPiece { src: iv(qr(2, 3), q(1)), dst: iv(q(0), qr(1, 3)) },
        ])
        .unwrap();
        assert_eq!(apply_map(&thirds(3, 2, 1), &shift).unwrap(), thirds(1, 3, 2));
        let bad = MeasurePreservingMap::new(vec![
            MapPiece { src: iv(q(0), qr(1, 2)), dst: iv(q(0), qr(1, 2)) },
            MapPiece { src: iv(qr(1, 2), q(1)), dst: iv(q(0), qr(1, 2)) },
        ]);
        assert!(matches!(bad, Err(Error::Invariant(_))));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let f = StepFunction::uniform_unit(vec![q(5), q(4), q(3), q(2), q(1)]);
        let g1 = shift_maps(&f, &AveragingScheme::single(q(0), q(1)).unwrap(), 5).unwrap();
        let g2 = shift_maps(&f, &AveragingScheme::single(qr(1, 5), qr(4, 5)).unwrap(), 3).unwrap();
        for a in &g1 {
            for b in &g2 {
                let seq = apply_map(&apply_map(&f, a).unwrap(), b).unwrap();
                assert_eq!(apply_map(&f, &b.after(a)).unwrap(), seq);
                assert_eq!(apply_map(&seq, &b.after(a).inverse()).unwrap(), f);
            }
        }
    }

    #[test]
    fn ryff_examples() {
        let sorted = thirds(3, 2, 1);
        assert!(ryff_factorize(&sorted).unwrap().0.is_identity());
        let y = thirds(1, 3, 2);
        let (g, _) = ryff_factorize(&y).unwrap();
        assert_eq!(g.apply_point(&qr(1, 6)), qr(1, 2));
        assert_eq!(g.apply_point(&qr(1, 2)), qr(5, 6));
        assert_eq!(g.apply_point(&qr(5, 6)), qr(1, 6));
        let dup = StepFunction::uniform_unit(vec![q(1), q(2), q(1), q(2)]);
        let (g, c) = ryff_factorize(&dup).unwrap();
        assert!(c.round_trip);
        assert_eq!(apply_map(&dup.rearrange(), &g).unwrap(), dup);
        let low = StepFunction::semiaxis(vec![q(0), q(1)], vec![qr(1, 2)], q(1)).unwrap();
        assert!(matches!(ryff_factorize(&low), Err(Error::Unsupported(_))));
        let mid = StepFunction::semiaxis(vec![q(0), q(1), q(2), q(3)], vec![q(1), q(4), q(2)], q(1)).unwrap();
        let (g, _) = ryff_factorize(&mid).unwrap();
        assert_eq!(apply_map(&mid.rearrange(), &g).unwrap(), mid);
    }

    #[test]
    fn shift_examples() {
        let e = SpaceSpec::l1(U);
        let f = thirds(3, 2, 1);
        let all = AveragingScheme::single(q(0), q(1)).unwrap();
        let (c, r) = approx_average_by_shifts(&e, &f, &all, 3).unwrap();
        assert_eq!(r.measured_error, 0.0);
        assert_eq!(c.evaluate().unwrap(), StepFunction::constant(U, q(2)));
        assert_eq!(r.exact_n, Some(3));
        let (_, r) = approx_average_by_shifts(&e, &f, &all, 2).unwrap();
        assert!(r.measured_error <= r.certified_bound);
        let one_fn = StepFunction::constant(U, q(1));
        let blocks = AveragingScheme::new(vec![
            IntervalUnion::from_intervals(vec![iv(q(0), qr(1, 4)), iv(qr(1, 2), qr(3, 4))]).unwrap(),
        ])
        .unwrap();
        let (c, r) = approx_average_by_shifts(&e, &one_fn, &blocks, 5).unwrap();
        assert_eq!(r.measured_error, 0.0);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn restriction_examples() {
        let e = SpaceSpec::l1(S);
        let f = StepFunction::indicator(S, &IntervalUnion::single(q(0), q(1)).unwrap()).unwrap();
        let cover = IntervalUnion::single(q(0), q(2)).unwrap();
        let (c, r) = approx_restriction(&e, &f, &cover, 4, true).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.measured_error, 0.0);
        let half = IntervalUnion::single(q(0), qr(1, 2)).unwrap();
        let (c, r) = approx_restriction(&e, &f, &half, 4, true).unwrap();
        assert_eq!(c.len(), 4);
        assert!((r.certified_bound - 0.5).abs() < 1e-15);
        assert!(r.measured_error <= r.certified_bound + 1e-15);
        for t in c.terms() {
            assert!(t.function.equimeasurable(&f).unwrap());
        }
        let (_, r) = approx_restriction(&e, &f, &IntervalUnion::empty(), 8, true).unwrap();
        assert!(r.measured_error <= r.certified_bound + 1e-15);
        assert!(matches!(approx_restriction(&e, &f, &half, 4, false), Err(Error::PhiNotVanishing(_))));
    }

    #[test]
    fn dominated_examples() {
        let e = SpaceSpec::l1(S);
        let y = StepFunction::indicator(S, &IntervalUnion::single(q(0), q(1)).unwrap()).unwrap();
        let (c, r) = approx_dominated(&e, &y, &y, 8, 3, true).unwrap();
        assert_eq!(r.measured_error, 0.0);
        assert_eq!(c.len(), 1);
        let zero_fn = StepFunction::zero(S);
        let (c, r) = approx_dominated(&e, &y, &zero_fn, 8, 4, true).unwrap();
        assert_eq!(c.weight_sum(), one());
        assert!(r.measured_error <= 2.0 / 8.0 + 1.0 / 16.0);
        assert!(r.rounds.iter().all(|x| x.envelope_ok));
        let half = y.scale(&qr(1, 2));
        let (_, r) = approx_dominated(&e, &y, &half, 8, 1, true).unwrap();
        assert!(r.rounds[0].envelope_ok);
        assert!(matches!(approx_dominated(&e, &half, &y, 8, 1, true), Err(Error::Precondition(_))));
    }
}
