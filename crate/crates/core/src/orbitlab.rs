//! Interval pairings for submajorized pairs, their convexification, orbit
//! membership, extreme points and the orbit approximation pipeline.

use std::collections::VecDeque;

use num::{Integer, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dilation::{governing_certificate, require_vanishing, Certificate};
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion};
use crate::majorize::{head_integral, majorizes, submajorizes, HeadIntegral};
use crate::rational::{one, qr, serde_q, zero, Q};
use crate::spaces::{norm_f64, SpaceSpec};
use crate::stepfn::{DomainKind, StepFunction};
use crate::transport::{
    apply_map, approx_restriction, partial_average, ryff_factorize, shift_maps, AveragingScheme,
    ConvexCombination, MeasurePreservingMap, Provenance, Term,
};

/// One block `Δ = I ∪ J` with `I` left of `J`, `x > y` on `I`, `y > x` on `J`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalPairing {
    #[serde(rename = "I")]
    pub i: Interval,
    #[serde(rename = "J")]
    pub j: Interval,
    #[serde(with = "serde_q")]
    pub x_on_i: Q,
    #[serde(with = "serde_q")]
    pub x_on_j: Q,
    #[serde(with = "serde_q")]
    pub y_on_i: Q,
    #[serde(with = "serde_q")]
    pub y_on_j: Q,
}

impl IntervalPairing {
    /// `∫_I (x - y)`, equal to `∫_J (y - x)`.
    pub fn balance(&self) -> Q {
        self.i.len() * (&self.x_on_i - &self.y_on_i)
    }

    pub fn lambda(&self) -> Q {
        (&self.y_on_i - &self.y_on_j) / (&self.x_on_i - &self.x_on_j)
    }

    pub fn block(&self) -> IntervalUnion {
        IntervalUnion::from_intervals(vec![self.i.clone(), self.j.clone()]).expect("valid intervals")
    }

    /// Exact local checks: ordering, balance and the one-sided comparisons.
    pub fn is_valid(&self) -> bool {
        self.i.hi <= self.j.lo
            && self.balance() == self.j.len() * (&self.y_on_j - &self.x_on_j)
            && self.x_on_i > self.y_on_i
            && self.y_on_j > self.x_on_j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitKind {
    #[serde(rename = "omega")]
    Omega,
    #[serde(rename = "prime")]
    OmegaPrime,
    #[serde(rename = "plus")]
    OmegaPlus,
}

impl std::str::FromStr for OrbitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omega" => Ok(OrbitKind::Omega),
            "prime" => Ok(OrbitKind::OmegaPrime),
            "plus" => Ok(OrbitKind::OmegaPlus),
            _ => Err(Error::Parse(format!("unknown orbit kind {s:?}"))),
        }
    }
}

/// Cells of the common refinement: `(interval, x value, y value)`.
fn common_cells(x: &StepFunction, y: &StepFunction) -> Vec<(Interval, Q, Q)> {
    let xs = x.refine(y.breakpoints());
    let ys = y.refine(x.breakpoints());
    xs.into_iter()
        .zip(ys)
        .map(|(a, b)| (Interval { lo: a.lo, hi: a.hi }, a.value, b.value))
        .collect()
}

/// Leftmost-first pairing of surplus (`x > y`) with later deficit (`y > x`).
pub fn bm_decompose(x: &StepFunction, y: &StepFunction) -> Result<Vec<IntervalPairing>> {
    if x.domain() != y.domain() {
        return Err(Error::domain("mixed domains"));
    }
    if !x.is_rearranged() || !y.is_rearranged() {
        return Err(Error::pre("pairing expects x = x* and y = y*"));
    }
    if !submajorizes(x, y)? {
        return Err(Error::pre("y is not submajorized by x"));
    }
    let mut queue: VecDeque<(Q, Q, Q, Q)> = VecDeque::new(); // (lo, hi, x, y)
    let mut out = Vec::new();
    for (iv, xv, yv) in common_cells(x, y) {
        if xv > yv {
            queue.push_back((iv.lo, iv.hi, xv, yv));
            continue;
        }
        if xv == yv {
            continue;
        }
        let q = &yv - &xv;
        let mut c = iv.lo.clone();
        while c < iv.hi {
            let Some(front) = queue.front_mut() else {
                return Err(Error::Invariant("deficit without earlier surplus".into()));
            };
            let r = &front.2 - &front.3;
            let avail = (&front.1 - &front.0) * &r;
            let need = (&iv.hi - &c) * &q;
            let mass = if avail < need { avail.clone() } else { need.clone() };
            let i_hi = &front.0 + &mass / &r;
            let j_hi = &c + &mass / &q;
            out.push(IntervalPairing {
                i: Interval { lo: front.0.clone(), hi: i_hi.clone() },
                j: Interval { lo: c.clone(), hi: j_hi.clone() },
                x_on_i: front.2.clone(),
                x_on_j: xv.clone(),
                y_on_i: front.3.clone(),
                y_on_j: yv.clone(),
            });
            front.0 = i_hi;
            if front.0 >= front.1 {
                queue.pop_front();
            }
            c = j_hi;
        }
    }
    Ok(out)
}

/// `y = x` off the union of the blocks.
fn agrees_off(x: &StepFunction, y: &StepFunction, blocks: &IntervalUnion) -> Result<bool> {
    let d = y.sub(x)?;
    let off = d.sub(&d.restrict(blocks)?)?;
    Ok(off.sup_abs().is_zero())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexifyReport {
    pub n_levels: u64,
    pub lambdas: Vec<String>,
    pub certified_bound: f64,
    pub measured_error: f64,
}

/// `z = Σ θ_i P(x|𝒜_i)` with `θ_i = 1/n` and `𝒜_i = {Δ_k : λ_k <= (2i-1)/(2n)}`.
pub fn convexify_bm(
    e: &SpaceSpec,
    x: &StepFunction,
    y: &StepFunction,
    pairings: &[IntervalPairing],
    n_levels: u64,
) -> Result<(ConvexCombination, ConvexifyReport)> {
    if n_levels == 0 {
        return Err(Error::pre("n_levels must be positive"));
    }
    let blocks: Vec<IntervalUnion> = pairings.iter().map(|p| p.block()).collect();
    let all = blocks.iter().fold(IntervalUnion::empty(), |a, b| a.union(b));
    if !agrees_off(x, y, &all)? {
        return Err(Error::pre("y differs from x off the paired blocks"));
    }
    let lambdas: Vec<Q> = pairings.iter().map(|p| p.lambda()).collect();
    if lambdas.iter().any(|l| l.is_negative() || l > &one()) {
        return Err(Error::Invariant("pairing coefficient outside [0,1]".into()));
    }
    let n = n_levels as i64;
    let mut terms: Vec<Term> = Vec::new();
    for i in 1..=n {
        let cut = qr(2 * i - 1, 2 * n);
        let chosen: Vec<IntervalUnion> =
            blocks.iter().zip(&lambdas).filter(|(_, l)| *l <= &cut).map(|(b, _)| b.clone()).collect();
        let scheme = AveragingScheme::new(chosen)?;
        if let Some(t) = terms.iter_mut().find(|t| t.provenance.averaging.as_ref() == Some(&scheme)) {
            t.weight += qr(1, n);
            continue;
        }
        let f = partial_average(x, &scheme)?;
        terms.push(Term {
            weight: qr(1, n),
            function: f,
            provenance: Provenance { averaging: Some(scheme), ..Provenance::base("x") },
        });
    }
    let combo = ConvexCombination::new(terms)?;
    let measured = norm_f64(e, &y.sub(&combo.evaluate()?)?)?;
    let bound = norm_f64(e, x)? / n_levels as f64;
    let report = ConvexifyReport {
        n_levels,
        lambdas: lambdas.iter().map(crate::rational::fmt_q).collect(),
        certified_bound: bound,
        measured_error: measured,
    };
    Ok((combo, report))
}

pub fn orbit_member(x: &StepFunction, y: &StepFunction, kind: OrbitKind) -> Result<bool> {
    if x.domain() != y.domain() {
        return Err(Error::domain("mixed domains"));
    }
    match kind {
        OrbitKind::Omega => submajorizes(x, y),
        OrbitKind::OmegaPlus => Ok(y.is_nonnegative() && submajorizes(x, y)?),
        OrbitKind::OmegaPrime => {
            let m = majorizes(x, y)?;
            Ok(y.is_nonnegative() && m)
        }
    }
}

/// Smallest `t` with `K(t) >= m`.
pub fn head_inverse(k: &HeadIntegral, m: &Q) -> Option<Q> {
    if !m.is_positive() {
        return Some(zero());
    }
    for w in k.nodes.windows(2) {
        if &w[1].k >= m {
            let slope = (&w[1].k - &w[0].k) / (&w[1].t - &w[0].t);
            return Some(&w[0].t + (m - &w[0].k) / slope);
        }
    }
    let last = k.nodes.last().unwrap();
    if k.final_slope.is_positive() {
        Some(&last.t + (m - &last.k) / &k.final_slope)
    } else {
        None
    }
}

/// `x*χ_[0,β]`.
pub fn truncation(xstar: &StepFunction, beta: &Q) -> Result<StepFunction> {
    xstar.restrict(&IntervalUnion::single(zero(), beta.clone())?)
}

/// Exact extreme-point test for the three orbits.
///
/// On the semi-axis with `x*(∞) = v > 0` an element with `y* = x*` that
/// takes values of modulus below `v` is a midpoint of two orbit elements,
/// so both `Ω₊` and `Ω` also require `|y| >= v` wherever `y ≠ 0`
/// (respectively everywhere for `Ω`).
pub fn classify_extreme(x: &StepFunction, y: &StepFunction, kind: OrbitKind) -> Result<bool> {
    if !orbit_member(x, y, kind)? {
        return Err(Error::pre("y is not in the orbit"));
    }
    let xs = x.rearrange();
    let ys = y.rearrange();
    let v = xs.tail_value();
    let low_values = |allow_zero: bool| {
        y.values()
            .iter()
            .chain(y.tail())
            .any(|w| w.abs() < v && !(allow_zero && w.is_zero()))
    };
    match kind {
        OrbitKind::Omega => Ok(ys == xs && (v.is_zero() || !low_values(false))),
        OrbitKind::OmegaPrime => Ok(ys == xs),
        OrbitKind::OmegaPlus => {
            if ys.tail_value().is_zero() {
                let beta = match y.distribution(&zero()) {
                    crate::rational::Ext::Finite(b) => b,
                    crate::rational::Ext::Infinite => return Ok(false),
                };
                if ys == truncation(&xs, &beta)? {
                    return Ok(true);
                }
            }
            Ok(!v.is_zero() && ys == xs && !low_values(true))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitStage {
    pub name: String,
    pub budget: f64,
    pub certified_bound: f64,
    pub measured_error: f64,
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub kind: OrbitKind,
    pub certificate: Certificate,
    pub epsilon: f64,
    pub stages: Vec<OrbitStage>,
    pub certified_bound: f64,
    pub measured_error: f64,
    pub term_count: usize,
}

pub const DEFAULT_TERM_BUDGET: u64 = 4096;

/// Weighted maps `Σ w·apply_map(base, γ)`.
type MapPlan = Vec<(Q, MeasurePreservingMap)>;

fn plan_eval(base: &StepFunction, plan: &MapPlan) -> Result<StepFunction> {
    let fs = plan.iter().map(|(_, g)| apply_map(base, g)).collect::<Result<Vec<_>>>()?;
    crate::transport::weighted_sum(plan.iter().map(|(w, _)| w).zip(&fs))
}

/// One paired block with `1 - λ` and its exact rotation count.
struct BlockPlan {
    keep: Q,
    exact_n: Option<u64>,
    scheme: AveragingScheme,
    /// `P(b|Δ) - b`.
    gap: StepFunction,
}

/// `M_k = round((1-λ_k)·N)`.
fn rotations(keep: &Q, n: u64) -> u64 {
    let v = keep * Q::from_integer(n.into()) + qr(1, 2);
    num::ToPrimitive::to_u64(&v.floor().to_integer()).unwrap_or(0)
}

/// Smallest `N` with `N(1-λ_k)` an integer multiple of the exact rotation
/// count of every block.
fn exact_count(blocks: &[BlockPlan]) -> Option<u64> {
    let mut n = num::BigInt::from(1);
    for bp in blocks {
        let rot = num::BigInt::from(bp.exact_n?);
        let (a, d) = (bp.keep.numer().clone(), bp.keep.denom().clone());
        let m = &d * &rot;
        n = n.lcm(&(&m / m.gcd(&a)));
    }
    num::ToPrimitive::to_u64(&n)
}

/// `b + Σ (M_k/N)(P(b|Δ_k) - b)`, the level-rounded target for `N` terms.
fn rounded_target(b: &StepFunction, blocks: &[BlockPlan], n: u64) -> Result<StepFunction> {
    let nq = Q::from_integer(n.into());
    let mut target = b.clone();
    for bp in blocks {
        let m = rotations(&bp.keep, n);
        if m > 0 {
            target = target.add(&bp.gap.scale(&(Q::from_integer(m.into()) / &nq)))?;
        }
    }
    Ok(target)
}

/// `(rounding error, certified shift bound)` for `N` terms. The rounding
/// error is evaluated on the rounded target itself.
fn blockwise_bounds(e: &SpaceSpec, b: &StepFunction, ys: &StepFunction, blocks: &[BlockPlan], n: u64) -> Result<(f64, f64)> {
    let round = norm_f64(e, &ys.sub(&rounded_target(b, blocks, n)?)?)?;
    let mut shift = 0.0;
    for bp in blocks {
        let m = rotations(&bp.keep, n);
        if m == 0 || bp.exact_n.is_some_and(|k| m.is_multiple_of(k)) {
            continue;
        }
        shift += m as f64 / n as f64 * crate::transport::shift_bound(e, b, &bp.scheme, m)?;
    }
    Ok((round, shift))
}

/// Approximates `ys` (rearranged, majorized by the rearranged `b`) by
/// `Σ w·apply_map(b, γ)` within `eps`.
///
/// Step data are constant on the cells of the common refinement, so the
/// pairing runs on `(b, ys)` directly. On each block the target is
/// `λ_k b + (1-λ_k) P(b|Δ_k)`; term `l` of `N` rotates block `k` by its
/// `l`-th shift when `l < M_k = round((1-λ_k)N)` and leaves it alone
/// otherwise. Rounding `λ_k` costs at most `‖b‖/N` and is evaluated on the
/// rounded target, the rotations at most `Σ (M_k/N)·bound_k(M_k)`. `N` is
/// the smallest count whose two errors add up to at most `eps`.
fn prime_plan(e: &SpaceSpec, b: &StepFunction, ys: &StepFunction, eps: f64, budget: u64, stages: &mut Vec<OrbitStage>) -> Result<MapPlan> {
    let pairings = bm_decompose(b, ys)?;
    let blocks_all: Vec<IntervalUnion> = pairings.iter().map(|p| p.block()).collect();
    let all = blocks_all.iter().fold(IntervalUnion::empty(), |a, c| a.union(c));
    if !agrees_off(b, ys, &all)? {
        return Err(Error::Invariant("pairing left mass unmatched".into()));
    }
    let mut blocks = Vec::new();
    for (p, blk) in pairings.iter().zip(blocks_all) {
        let keep = one() - p.lambda();
        if keep.is_negative() || keep > one() {
            return Err(Error::Invariant("pairing coefficient outside [0,1]".into()));
        }
        if keep.is_zero() {
            continue;
        }
        let scheme = AveragingScheme::new(vec![blk])?;
        let gap = partial_average(b, &scheme)?.sub(b)?;
        blocks.push(BlockPlan { keep, exact_n: crate::transport::exact_shift_n(b, &scheme), scheme, gap });
    }
    let half = eps / 2.0;
    let fits = |n: u64| -> Result<bool> {
        let (r, s) = blockwise_bounds(e, b, ys, &blocks, n)?;
        Ok(r + s <= eps)
    };
    let exact = exact_count(&blocks).filter(|n| *n <= budget);
    let n = match exact {
        Some(n) => n,
        None => {
            let mut n = 1u64;
            while !fits(n)? {
                if n >= budget {
                    let (r, s) = blockwise_bounds(e, b, ys, &blocks, n)?;
                    return Err(Error::BudgetExceeded { achieved: r + s, target: eps, terms: n as usize });
                }
                n = (n * 2).min(budget);
            }
            let (mut lo, mut hi) = (n / 2, n);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if fits(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    let (rb, sb) = if exact.is_some() { (0.0, 0.0) } else { blockwise_bounds(e, b, ys, &blocks, n)? };

    let nq = Q::from_integer(n.into());
    let target = rounded_target(b, &blocks, n)?;
    let mut per_block: Vec<Vec<MeasurePreservingMap>> = Vec::with_capacity(blocks.len());
    for bp in &blocks {
        let m = rotations(&bp.keep, n);
        per_block.push(if m > 0 { shift_maps(b, &bp.scheme, m)? } else { Vec::new() });
    }
    let mut plan: MapPlan = Vec::with_capacity(n as usize);
    for l in 0..n as usize {
        let pieces: Vec<_> = per_block.iter().filter_map(|maps| maps.get(l)).flat_map(|g| g.pieces().to_vec()).collect();
        plan.push((one() / &nq, MeasurePreservingMap::new(pieces)?));
    }
    let plan = merge_plan(plan);
    stages.push(OrbitStage {
        name: "rounding".into(),
        budget: half,
        certified_bound: rb,
        measured_error: norm_f64(e, &ys.sub(&target)?)?,
        terms: n as usize,
    });
    stages.push(OrbitStage {
        name: "shift".into(),
        budget: eps - rb,
        certified_bound: sb,
        measured_error: norm_f64(e, &target.sub(&plan_eval(b, &plan)?)?)?,
        terms: plan.len(),
    });
    Ok(plan)
}

fn merge_plan(plan: MapPlan) -> MapPlan {
    let mut out: MapPlan = Vec::with_capacity(plan.len());
    let mut index = std::collections::BTreeMap::new();
    for (w, g) in plan {
        let key = serde_json::to_string(&g).expect("serializable");
        match index.get(&key) {
            Some(&i) => {
                let slot: &mut (Q, MeasurePreservingMap) = &mut out[i];
                slot.0 += w;
            }
            None => {
                index.insert(key, out.len());
                out.push((w, g));
            }
        }
    }
    out
}

/// Output of the non-negative pipeline: `Σ w·apply_map(base, γ)` where the
/// base is `x*` or its truncation at `β`.
struct PlusPlan {
    plan: MapPlan,
    truncation: Option<Q>,
}

fn compose_left(plan: MapPlan, left: &MeasurePreservingMap) -> MapPlan {
    plan.into_iter().map(|(w, g)| (w, left.after(&g))).collect()
}

fn prime_pipeline(e: &SpaceSpec, x: &StepFunction, y: &StepFunction, eps: f64, budget: u64, stages: &mut Vec<OrbitStage>) -> Result<PlusPlan> {
    let (gy, _) = ryff_factorize(y)?;
    let plan = prime_plan(e, &x.rearrange(), &y.rearrange(), eps, budget, stages)?;
    Ok(PlusPlan { plan: compose_left(plan, &gy), truncation: None })
}

fn plus_pipeline(
    e: &SpaceSpec,
    x: &StepFunction,
    y: &StepFunction,
    eps: f64,
    budget: u64,
    override_flag: bool,
    stages: &mut Vec<OrbitStage>,
) -> Result<PlusPlan> {
    let xs = x.rearrange();
    let ys = y.rearrange();
    let v = xs.tail_value();
    let vy = ys.tail_value();
    if vy.is_zero() {
        let m = match y.integral() {
            crate::rational::Ext::Finite(m) => m,
            crate::rational::Ext::Infinite => return Err(Error::Invariant("tail 0 with infinite mass".into())),
        };
        let s0 = head_inverse(&head_integral(&xs), &m).ok_or_else(|| Error::pre("y is not submajorized by x"))?;
        let b = truncation(&xs, &s0)?;
        let (gy, _) = ryff_factorize(y)?;
        let plan = prime_plan(e, &b, &ys, eps, budget, stages)?;
        let trunc = (b != xs).then_some(s0);
        return Ok(PlusPlan { plan: compose_left(plan, &gy), truncation: trunc });
    }
    if vy != v {
        return Err(Error::Unsupported("y tail must be 0 or equal to the tail of x*".into()));
    }
    // strip the common tail, then recover x°χ_[0,s0] from rearrangements of x°
    let (gy, _) = ryff_factorize(y)?;
    let lift = StepFunction::constant(DomainKind::SemiAxis, v.clone());
    let xo = xs.sub(&lift)?;
    let yo = ys.sub(&lift)?;
    let m = match yo.integral() {
        crate::rational::Ext::Finite(m) => m,
        crate::rational::Ext::Infinite => return Err(Error::Invariant("stripped tail left infinite mass".into())),
    };
    let s0 = head_inverse(&head_integral(&xo), &m).ok_or_else(|| Error::pre("y is not submajorized by x"))?;
    let bo = truncation(&xo, &s0)?;
    let inner = prime_plan(e, &bo, &yo, eps / 2.0, budget, stages)?;
    let rest = xo.sub(&bo)?.rearrange();
    let max_n = (budget / inner.len().max(1) as u64).max(1);
    let mut n = 1u64;
    let mut bound = if rest.sup_abs().is_zero() { 0.0 } else { f64::INFINITY };
    while bound > eps / 2.0 {
        bound = norm_f64(e, &crate::spaces::dilate(&rest, &Q::from_integer(n.into()))?)? / n as f64;
        if bound <= eps / 2.0 {
            break;
        }
        if n >= max_n {
            return Err(Error::BudgetExceeded { achieved: bound, target: eps / 2.0, terms: inner.len() * n as usize });
        }
        n = (n * 2).min(max_n);
    }
    let set = IntervalUnion::single(zero(), s0.clone())?;
    let (rcombo, rrep) = approx_restriction(e, &xo, &set, n, override_flag)?;
    if rrep.target != bo {
        return Err(Error::Invariant("restriction target is not the truncation".into()));
    }
    stages.push(OrbitStage {
        name: "restriction".into(),
        budget: eps / 2.0,
        certified_bound: rrep.certified_bound,
        measured_error: rrep.measured_error,
        terms: rcombo.len(),
    });
    let mut plan = Vec::with_capacity(inner.len() * rcombo.len());
    for (w, g) in &inner {
        for t in rcombo.terms() {
            let h = t.provenance.map.clone().unwrap_or_else(MeasurePreservingMap::identity);
            plan.push((w * &t.weight, gy.after(&g.after(&h))));
        }
    }
    Ok(PlusPlan { plan: merge_plan(plan), truncation: None })
}

/// `x*χ_[0,β] - x*χ_[β,∞)`.
pub fn sign_split(xstar: &StepFunction, beta: &Q) -> Result<StepFunction> {
    let head = truncation(xstar, beta)?;
    head.scale(&qr(2, 1)).sub(xstar)
}

/// A convex combination of elements of `Ext(Ω)` within `eps` of `y` in `E`.
///
/// Terms are rearrangements of `x*`, of truncations `x*χ_[0,β]`, or (for
/// `Ω`) sign patterns applied to those and to `x*χ_[0,β] - x*χ_[β,∞)`.
pub fn orbit_approximate(
    e: &SpaceSpec,
    x: &StepFunction,
    y: &StepFunction,
    kind: OrbitKind,
    eps: f64,
    override_flag: bool,
    budget: u64,
) -> Result<(ConvexCombination, OrbitReport)> {
    if !(eps > 0.0) {
        return Err(Error::pre("epsilon must be positive"));
    }
    if e.domain != x.domain() {
        return Err(Error::domain("space and functions live on different domains"));
    }
    if kind == OrbitKind::OmegaPrime {
        if !y.is_nonnegative() {
            return Err(Error::pre("Ω′ needs y >= 0"));
        }
        if x.mass().is_infinite() || y.mass().is_infinite() {
            return Err(Error::pre("Ω′ needs finite masses"));
        }
    }
    if !orbit_member(x, y, kind)? {
        return Err(Error::pre("y is not in the orbit"));
    }
    let cert = governing_certificate(e, override_flag);
    require_vanishing(&cert)?;
    let xs = x.rearrange();
    let mut stages = Vec::new();
    let mut terms: Vec<Term> = Vec::new();
    match kind {
        OrbitKind::OmegaPrime => {
            let p = prime_pipeline(e, x, y, eps, budget, &mut stages)?;
            for (w, g) in p.plan {
                terms.push(Term { weight: w, function: apply_map(&xs, &g)?, provenance: Provenance::mapped("x*", g) });
            }
        }
        OrbitKind::OmegaPlus => {
            let p = plus_pipeline(e, x, y, eps, budget, override_flag, &mut stages)?;
            let base = match &p.truncation {
                Some(b) => truncation(&xs, b)?,
                None => xs.clone(),
            };
            for (w, g) in p.plan {
                let function = apply_map(&base, &g)?;
                terms.push(Term { weight: w, function, provenance: Provenance { truncation: p.truncation.clone(), ..Provenance::mapped("x*", g) } });
            }
        }
        OrbitKind::Omega => {
            if y.domain() != DomainKind::UnitInterval {
                return Err(Error::Unsupported("signed orbit approximation is implemented on (0,1) only".into()));
            }
            let a = y.abs();
            let u = y.map(|v| if v.is_negative() { -one() } else { one() });
            let p = plus_pipeline(e, x, &a, eps, budget, override_flag, &mut stages)?;
            let half = qr(1, 2);
            for (w, g) in p.plan {
                let whole = u.zip_with(&apply_map(&xs, &g)?, |s, f| s * f)?;
                let prov = Provenance { multiplier: Some(u.clone()), ..Provenance::mapped("x*", g.clone()) };
                match &p.truncation {
                    None => terms.push(Term { weight: w, function: whole, provenance: prov }),
                    Some(beta) => {
                        let split = u.zip_with(&apply_map(&sign_split(&xs, beta)?, &g)?, |s, f| s * f)?;
                        terms.push(Term { weight: &w * &half, function: whole, provenance: prov.clone() });
                        terms.push(Term {
                            weight: &w * &half,
                            function: split,
                            provenance: Provenance { sign_split: Some(beta.clone()), ..prov },
                        });
                    }
                }
            }
        }
    }
    let combo = ConvexCombination::new(terms)?.merge_identical();
    let measured = norm_f64(e, &y.sub(&combo.evaluate()?)?)?;
    let certified: f64 = stages.iter().map(|s| s.certified_bound).sum();
    let report = OrbitReport {
        kind,
        certificate: cert,
        epsilon: eps,
        stages,
        certified_bound: certified,
        measured_error: measured,
        term_count: combo.len(),
    };
    Ok((combo, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn unit(vals: &[Q]) -> StepFunction {
        StepFunction::uniform_unit(vals.to_vec())
    }

    fn iv(a: Q, b: Q) -> Interval {
        Interval { lo: a, hi: b }
    }

    #[test]
    fn two_level_pairing() {
        let x = unit(&[q(4), q(2)]);
        let y = unit(&[q(3), q(3)]);
        let p = bm_decompose(&x, &y).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].i, iv(zero(), qr(1, 2)));
        assert_eq!(p[0].j, iv(qr(1, 2), one()));
        assert!(p[0].is_valid());
        assert_eq!(p[0].lambda(), zero());
    }

    #[test]
    fn three_level_pairing() {
        let x = unit(&[q(3), q(2), q(1)]);
        let y = unit(&[q(3), qr(7, 4), qr(5, 4)]);
        let p = bm_decompose(&x, &y).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].i, iv(qr(1, 3), qr(2, 3)));
        assert_eq!(p[0].j, iv(qr(2, 3), one()));
        assert_eq!(p[0].balance(), qr(1, 12));
        assert_eq!(p[0].lambda(), qr(1, 2));
    }

    #[test]
    fn convexify_exact_at_lcm() {
        let x = unit(&[q(3), q(2), q(1)]);
        let y = unit(&[q(3), qr(7, 4), qr(5, 4)]);
        let p = bm_decompose(&x, &y).unwrap();
        let e = SpaceSpec::l1(DomainKind::UnitInterval);
        let (c, r) = convexify_bm(&e, &x, &y, &p, 2).unwrap();
        assert_eq!(c.evaluate().unwrap(), y);
        assert_eq!(r.measured_error, 0.0);
        let (_, r) = convexify_bm(&e, &x, &y, &p, 3).unwrap();
        assert!(r.measured_error <= r.certified_bound + 1e-12);
    }

    #[test]
    fn rejects_unsorted_or_unmajorized() {
        let x = unit(&[q(1), q(2)]);
        let y = unit(&[q(1), q(1)]);
        assert!(matches!(bm_decompose(&x, &y), Err(Error::Precondition(_))));
        let x = unit(&[q(1), q(1)]);
        let y = unit(&[q(2), q(0)]);
        assert!(matches!(bm_decompose(&x, &y), Err(Error::Precondition(_))));
    }

    #[test]
    fn approximate_prime_unit() {
        let x = unit(&[q(3), q(2), q(1)]);
        let y = unit(&[qr(5, 4), q(3), qr(7, 4)]);
        let e = SpaceSpec::l1(DomainKind::UnitInterval);
        let (c, r) = orbit_approximate(&e, &x, &y, OrbitKind::OmegaPrime, 1e-2, false, DEFAULT_TERM_BUDGET).unwrap();
        assert!(r.measured_error <= 1e-2, "{r:?}");
        for t in c.terms() {
            assert_eq!(t.function.rearrange(), x);
        }
    }

    #[test]
    fn bounded_level_count_under_small_budget() {
        // block [0, 37/101] needs 101 rotations for an exact average
        let x = StepFunction::unit(vec![zero(), qr(1, 101), qr(37, 101), one()], vec![q(5), q(1), q(0)]).unwrap();
        let scheme = AveragingScheme::new(vec![IntervalUnion::single(zero(), qr(37, 101)).unwrap()]).unwrap();
        let half = x.add(&partial_average(&x, &scheme).unwrap()).unwrap().scale(&qr(1, 2));
        let e = SpaceSpec::l1(DomainKind::UnitInterval);
        let (c, r) = orbit_approximate(&e, &x, &half, OrbitKind::OmegaPrime, 0.2, false, 40).unwrap();
        assert!(c.len() <= 40);
        let shift = r.stages.iter().find(|s| s.name == "shift").unwrap();
        assert!(shift.certified_bound > 0.0);
        assert!(r.measured_error <= r.certified_bound + 1e-12 && r.certified_bound <= 0.2, "{r:?}");
        let err = orbit_approximate(&e, &x, &half, OrbitKind::OmegaPrime, 1e-4, false, 40).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    #[test]
    fn approximate_plus_and_omega() {
        let x = unit(&[q(4), q(2), q(0), q(0)]);
        let y = unit(&[q(1), q(2), q(1), q(0)]);
        let e = SpaceSpec::l1(DomainKind::UnitInterval);
        let (c, r) = orbit_approximate(&e, &x, &y, OrbitKind::OmegaPlus, 1e-2, false, DEFAULT_TERM_BUDGET).unwrap();
        assert!(r.measured_error <= 1e-2, "{r:?}");
        for t in c.terms() {
            assert!(classify_extreme(&x, &t.function, OrbitKind::OmegaPlus).unwrap());
        }
        let y = unit(&[q(-1), q(2), q(1), qr(-1, 2)]);
        let (c, r) = orbit_approximate(&e, &x, &y, OrbitKind::Omega, 1e-2, false, DEFAULT_TERM_BUDGET).unwrap();
        assert!(r.measured_error <= 1e-2, "{r:?}");
        for t in c.terms() {
            assert!(classify_extreme(&x, &t.function, OrbitKind::Omega).unwrap());
        }
    }

    #[test]
    fn approximate_plus_semi_with_tail() {
        let x = StepFunction::semiaxis(vec![zero(), one()], vec![q(3)], one()).unwrap();
        let y = StepFunction::semiaxis(vec![zero(), q(2)], vec![q(2)], one()).unwrap();
        let e = SpaceSpec::l1(DomainKind::SemiAxis);
        let err = orbit_approximate(&e, &x, &y, OrbitKind::OmegaPlus, 5e-2, false, DEFAULT_TERM_BUDGET);
        assert!(matches!(err, Err(Error::PhiNotVanishing(_))));
        let linf_sum = SpaceSpec::new(crate::spaces::Space::L1PlusLinf, DomainKind::SemiAxis).unwrap();
        let (c, r) = orbit_approximate(&linf_sum, &x, &y, OrbitKind::OmegaPlus, 5e-2, false, DEFAULT_TERM_BUDGET).unwrap();
        assert!(r.measured_error <= 5e-2, "{r:?}");
        for t in c.terms() {
            assert_eq!(t.function.rearrange(), x);
        }
    }

    #[test]
    fn extreme_points() {
        let x = unit(&[q(2), q(1)]);
        assert!(classify_extreme(&x, &unit(&[q(1), q(2)]), OrbitKind::OmegaPrime).unwrap());
        assert!(!classify_extreme(&x, &unit(&[qr(3, 2), qr(3, 2)]), OrbitKind::OmegaPrime).unwrap());
        assert!(classify_extreme(&x, &unit(&[q(0), q(2)]), OrbitKind::OmegaPlus).unwrap());
        assert!(!classify_extreme(&x, &unit(&[q(0), q(1)]), OrbitKind::OmegaPlus).unwrap());
        assert!(classify_extreme(&x, &unit(&[q(-1), q(2)]), OrbitKind::Omega).unwrap());
        assert!(!classify_extreme(&x, &unit(&[q(0), q(2)]), OrbitKind::Omega).unwrap());
        assert!(matches!(classify_extreme(&x, &unit(&[q(3), q(0)]), OrbitKind::Omega), Err(Error::Precondition(_))));
        // semi-axis, tail 1: values below the tail are not extreme
        let xs = StepFunction::semiaxis(vec![zero(), one()], vec![q(2)], one()).unwrap();
        let ys = StepFunction::semiaxis(vec![zero(), one(), q(2)], vec![q(2), qr(1, 2)], one()).unwrap();
        assert!(!classify_extreme(&xs, &ys, OrbitKind::OmegaPlus).unwrap());
        let ys = StepFunction::semiaxis(vec![zero(), one(), q(2)], vec![q(1), q(2)], one()).unwrap();
        assert!(classify_extreme(&xs, &ys, OrbitKind::OmegaPlus).unwrap());
    }
}
