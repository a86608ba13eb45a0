//! Independent reference implementations used by the integration suites.
//!
//! Everything here works on raw `(breakpoints, values, tail)` data and
//! never calls the library's algorithms.

#![allow(dead_code)]

use num::{BigRational, Signed, Zero};
use rearr_core::StepFunction;

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(n.into())
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(n.into(), d.into())
}

/// Plain step data. `unit` functions end at 1 with tail 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Sf {
    pub unit: bool,
    pub bps: Vec<Q>,
    pub vals: Vec<Q>,
    pub tail: Q,
}

impl Sf {
    pub fn of(f: &StepFunction) -> Sf {
        Sf {
            unit: f.domain() == rearr_core::DomainKind::UnitInterval,
            bps: f.breakpoints().to_vec(),
            vals: f.values().to_vec(),
            tail: f.tail().cloned().unwrap_or_else(Q::zero),
        }
    }

    pub fn end(&self) -> Q {
        self.bps.last().cloned().unwrap_or_else(Q::zero)
    }

    /// Right-continuous value at `t >= 0`.
    pub fn eval(&self, t: &Q) -> Q {
        // first breakpoint strictly above t closes the cell holding t
        let k = self.bps.partition_point(|b| b <= t);
        if k == 0 || k > self.vals.len() {
            return self.tail.clone();
        }
        self.vals[k - 1].clone()
    }
}

/// Sorted union of all breakpoints, with 0 and (for unit data) 1.
pub fn grid(fs: &[&Sf]) -> Vec<Q> {
    let mut g: Vec<Q> = fs.iter().flat_map(|f| f.bps.iter().cloned()).collect();
    g.push(Q::zero());
    if fs.iter().any(|f| f.unit) {
        g.push(q(1));
    }
    g.sort();
    g.dedup();
    g
}

/// Rebuilds step data on a grid from a point rule.
pub fn build(unit: bool, g: &[Q], tail: Q, f: impl Fn(&Q) -> Q) -> Sf {
    let mut vals = Vec::new();
    for w in g.windows(2) {
        let mid = (&w[0] + &w[1]) / q(2);
        vals.push(f(&mid));
    }
    let bps = if g.len() >= 2 { g.to_vec() } else { vec![Q::zero()] };
    Sf { unit, bps, vals, tail: if unit { Q::zero() } else { tail } }
}

pub fn add(a: &Sf, b: &Sf) -> Sf {
    let g = grid(&[a, b]);
    build(a.unit, &g, &a.tail + &b.tail, |t| a.eval(t) + b.eval(t))
}

pub fn sub(a: &Sf, b: &Sf) -> Sf {
    let g = grid(&[a, b]);
    build(a.unit, &g, &a.tail - &b.tail, |t| a.eval(t) - b.eval(t))
}

pub fn scale(a: &Sf, c: &Q) -> Sf {
    Sf { unit: a.unit, bps: a.bps.clone(), vals: a.vals.iter().map(|v| v * c).collect(), tail: &a.tail * c }
}

/// `Σ w_i f_i`.
pub fn combo(items: &[(Q, Sf)]) -> Sf {
    let refs: Vec<&Sf> = items.iter().map(|(_, f)| f).collect();
    let g = grid(&refs);
    let tail: Q = items.iter().map(|(w, f)| w * &f.tail).sum();
    let cells = g.len().saturating_sub(1);
    // difference array over grid cells
    let mut diff = vec![Q::zero(); cells + 1];
    let at = |t: &Q| g.binary_search(t).expect("breakpoint on the grid");
    for (w, f) in items {
        for (i, v) in f.vals.iter().enumerate() {
            let c = w * v;
            diff[at(&f.bps[i])] += &c;
            diff[at(&f.bps[i + 1])] -= &c;
        }
        if !f.unit && !f.tail.is_zero() {
            let c = w * &f.tail;
            diff[at(&f.end())] += &c;
            diff[cells] -= &c;
        }
    }
    let mut acc = Q::zero();
    let mut vals = Vec::with_capacity(cells);
    for d in diff.iter().take(cells) {
        acc += d;
        vals.push(acc.clone());
    }
    let bps = if g.len() >= 2 { g } else { vec![Q::zero()] };
    Sf { unit: items[0].1.unit, bps, vals, tail: if items[0].1.unit { Q::zero() } else { tail } }
}

/// Agreement at every grid cell and at infinity.
pub fn same(a: &Sf, b: &Sf) -> bool {
    if a.unit != b.unit || a.tail != b.tail {
        return false;
    }
    let g = grid(&[a, b]);
    g.windows(2).all(|w| {
        let mid = (&w[0] + &w[1]) / q(2);
        a.eval(&mid) == b.eval(&mid)
    })
}

/// Decreasing rearrangement as runs `(length, value)` plus the tail level.
/// On the semi-axis values not above the tail are absorbed into it.
pub fn sorted(f: &Sf) -> (Vec<(Q, Q)>, Q) {
    let t = f.tail.abs();
    let mut runs: Vec<(Q, Q)> = Vec::new();
    for i in 0..f.vals.len() {
        let v = f.vals[i].abs();
        if !f.unit && v <= t {
            continue;
        }
        runs.push((&f.bps[i + 1] - &f.bps[i], v));
    }
    runs.sort_by(|a, b| b.1.cmp(&a.1));
    let mut merged: Vec<(Q, Q)> = Vec::new();
    for (l, v) in runs {
        match merged.last_mut() {
            Some(last) if last.1 == v => last.0 += l,
            _ => merged.push((l, v)),
        }
    }
    (merged, if f.unit { Q::zero() } else { t })
}

pub fn sorted_fn(f: &Sf) -> Sf {
    let (runs, t) = sorted(f);
    let mut bps = vec![Q::zero()];
    let mut vals = Vec::new();
    let mut acc = Q::zero();
    for (l, v) in runs {
        acc += l;
        bps.push(acc.clone());
        vals.push(v);
    }
    Sf { unit: f.unit, bps, vals, tail: t }
}

/// `f*(t) = inf{s : m{|f| > s} <= t}` from the distribution function.
pub fn star_by_distribution(f: &Sf, t: &Q) -> Q {
    let tail = f.tail.abs();
    let dist = |s: &Q| -> Option<Q> {
        if !f.unit && s < &tail {
            return None;
        }
        let mut m = Q::zero();
        for i in 0..f.vals.len() {
            if &f.vals[i].abs() > s {
                m += &f.bps[i + 1] - &f.bps[i];
            }
        }
        Some(m)
    };
    let mut cands: Vec<Q> = f.vals.iter().map(|v| v.abs()).collect();
    cands.push(tail.clone());
    cands.push(Q::zero());
    cands.sort();
    for s in cands {
        if let Some(d) = dist(&s) {
            if &d <= t {
                return s;
            }
        }
    }
    unreachable!("the largest value always qualifies")
}

/// `∫_0^t f*`.
pub fn head(runs: &(Vec<(Q, Q)>, Q), t: &Q) -> Q {
    let mut acc = Q::zero();
    let mut pos = Q::zero();
    for (l, v) in &runs.0 {
        let hi = &pos + l;
        if t <= &hi {
            return acc + (t - &pos) * v;
        }
        acc += l * v;
        pos = hi;
    }
    acc + (t - pos) * &runs.1
}

/// `∫_0^t f*` at every point of the increasing list `ts`.
fn heads(runs: &(Vec<(Q, Q)>, Q), ts: &[Q]) -> Vec<Q> {
    let mut out = Vec::with_capacity(ts.len());
    let (mut acc, mut pos, mut k) = (Q::zero(), Q::zero(), 0);
    for t in ts {
        while k < runs.0.len() && &(&pos + &runs.0[k].0) <= t {
            acc += &runs.0[k].0 * &runs.0[k].1;
            pos += &runs.0[k].0;
            k += 1;
        }
        let v = runs.0.get(k).map_or(&runs.1, |r| &r.1);
        out.push(&acc + (t - &pos) * v);
    }
    out
}

fn cum_ends(runs: &(Vec<(Q, Q)>, Q)) -> Vec<Q> {
    let mut out = Vec::new();
    let mut pos = Q::zero();
    for (l, _) in &runs.0 {
        pos += l;
        out.push(pos.clone());
    }
    out
}

/// `y ≺≺ x`: head integrals compared at all corners, plus the slopes at infinity.
pub fn submaj(x: &Sf, y: &Sf) -> bool {
    let rx = sorted(x);
    let ry = sorted(y);
    let mut ts = cum_ends(&rx);
    ts.extend(cum_ends(&ry));
    if x.unit {
        ts.push(q(1));
    }
    if !ts.iter().all(|t| head(&ry, t) <= head(&rx, t)) {
        return false;
    }
    x.unit || ry.1 <= rx.1
}

pub fn mass(f: &Sf) -> Option<Q> {
    if !f.unit && !f.tail.is_zero() {
        return None;
    }
    Some((0..f.vals.len()).map(|i| (&f.bps[i + 1] - &f.bps[i]) * f.vals[i].abs()).sum())
}

pub fn signed_integral(f: &Sf) -> Option<Q> {
    if !f.unit && !f.tail.is_zero() {
        return None;
    }
    Some((0..f.vals.len()).map(|i| (&f.bps[i + 1] - &f.bps[i]) * &f.vals[i]).sum())
}

pub fn sup_abs(f: &Sf) -> Q {
    f.vals.iter().map(|v| v.abs()).chain(std::iter::once(f.tail.abs())).max().unwrap()
}

/// `σ_τ f(t) = f(t/τ)`; on (0,1) truncated at 1 and padded with 0.
pub fn dilate(f: &Sf, tau: &Q) -> Sf {
    let mut bps: Vec<Q> = f.bps.iter().map(|b| b * tau).collect();
    let mut vals = f.vals.clone();
    if f.unit {
        while bps.len() >= 2 && bps[bps.len() - 2] >= q(1) {
            bps.pop();
            vals.pop();
        }
        let last = bps.len() - 1;
        if bps[last] > q(1) {
            bps[last] = q(1);
        } else if bps[last] < q(1) {
            bps.push(q(1));
            vals.push(Q::zero());
        }
    }
    Sf { unit: f.unit, bps, vals, tail: f.tail.clone() }
}

/// Concave piecewise-linear `ψ` given by nodes, linear from the origin,
/// affine with `final_slope` past the last node.
#[derive(Debug, Clone)]
pub struct Psi {
    pub nodes: Vec<(Q, Q)>,
    pub final_slope: Q,
}

impl Psi {
    pub fn eval(&self, t: &Q) -> Q {
        let first = &self.nodes[0];
        if t <= &first.0 {
            return &first.1 * t / &first.0;
        }
        for w in self.nodes.windows(2) {
            if t <= &w[1].0 {
                return &w[0].1 + (&w[1].1 - &w[0].1) * (t - &w[0].0) / (&w[1].0 - &w[0].0);
            }
        }
        let (lt, lp) = self.nodes.last().unwrap();
        lp + &self.final_slope * (t - lt)
    }
}

/// `sup_t ∫_0^t f* / ψ(t)`; `None` when infinite.
pub fn marcinkiewicz(psi: &Psi, f: &Sf) -> Option<Q> {
    let r = sorted(f);
    let mut ts = cum_ends(&r);
    ts.extend(psi.nodes.iter().map(|n| n.0.clone()));
    if f.unit {
        ts.push(q(1));
        ts.retain(|t| t <= &q(1));
    }
    ts.retain(|t| t.is_positive());
    ts.sort();
    ts.dedup();
    let mut best = Q::zero();
    for (t, h) in ts.iter().zip(heads(&r, &ts)) {
        let v = h / psi.eval(t);
        if v > best {
            best = v;
        }
    }
    if !f.unit && r.1.is_positive() {
        if psi.final_slope.is_zero() {
            return None;
        }
        let lim = &r.1 / &psi.final_slope;
        if lim > best {
            best = lim;
        }
    }
    Some(best)
}

pub fn to_f64(v: &Q) -> f64 {
    num::ToPrimitive::to_f64(v).unwrap()
}
