//! Dilation functionals `φ`, `φ_fin`, `φ_cut`: estimators, exact criteria
//! and the splitting that keeps `φ` on both halves.
//!
//! Samples are `(1/s)·‖σ_s(x*)·w_s‖_E` at `s = 2^j` with window `w_s` equal
//! to `1`, `χ_[0,1]` or `χ_[0,s]`. They decrease in `s`, so the last sample
//! is an upper bound for the limit; nothing here certifies positivity from
//! samples alone.

use num::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalUnion;
use crate::majorize::head_integral;
use crate::rational::{fmt_q, one, pow2, to_f64, zero, Ext, Q};
use crate::spaces::{dilate, norm, ConcaveFn, Generator, NormValue, Space, SpaceSpec};
use crate::stepfn::{DomainKind, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiKind {
    #[serde(rename = "phi")]
    Phi,
    #[serde(rename = "fin")]
    PhiFin,
    #[serde(rename = "cut")]
    PhiCut,
}

impl std::str::FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi" => Ok(PhiKind::Phi),
            "fin" | "phi_fin" => Ok(PhiKind::PhiFin),
            "cut" | "phi_cut" => Ok(PhiKind::PhiCut),
            _ => Err(Error::Parse(format!("unknown phi kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiSample {
    pub j: u32,
    pub s: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiEstimate {
    pub space: Space,
    pub domain: DomainKind,
    pub kind: PhiKind,
    pub samples: Vec<PhiSample>,
    pub reported: f64,
    pub bracket: [f64; 2],
}

fn window(kind: PhiKind, s: &Q) -> Option<Q> {
    match kind {
        PhiKind::Phi => None,
        PhiKind::PhiFin => Some(one()),
        PhiKind::PhiCut => Some(s.clone()),
    }
}

fn check_kind(f: &StepFunction, kind: PhiKind) -> Result<()> {
    if kind != PhiKind::Phi && f.domain() != DomainKind::SemiAxis {
        return Err(Error::domain("windowed variants of phi live on the semi-axis"));
    }
    Ok(())
}

/// `(1/s)·‖σ_s(x*)·window‖_E` for a rearranged `x*`.
pub fn phi_sample_value(e: &SpaceSpec, xstar: &StepFunction, kind: PhiKind, s: &Q) -> Result<NormValue> {
    let mut g = dilate(xstar, s)?;
    if let Some(w) = window(kind, s) {
        g = g.restrict(&IntervalUnion::single(zero(), w)?)?;
    }
    Ok(match norm(e, &g)? {
        NormValue::Exact(v) => NormValue::Exact(v / s),
        NormValue::Approx(v) => NormValue::Approx(v / to_f64(s)),
    })
}

pub fn phi_estimate(e: &SpaceSpec, f: &StepFunction, kind: PhiKind, jmax: u32) -> Result<PhiEstimate> {
    check_kind(f, kind)?;
    norm(e, f)?;
    let xstar = f.rearrange();
    let mut samples: Vec<PhiSample> = Vec::with_capacity(jmax as usize + 1);
    let mut last: Option<NormValue> = None;
    for j in 0..=jmax {
        let s = pow2(j as i64);
        let v = phi_sample_value(e, &xstar, kind, &s)?;
        if let Some(prev) = &last {
            let ok = match (prev, &v) {
                (NormValue::Exact(a), NormValue::Exact(b)) => b <= a,
                _ => v.to_f64() <= prev.to_f64() * (1.0 + 1e-12) + 1e-300,
            };
            if !ok {
                return Err(Error::Invariant(format!(
                    "phi samples increased at j={j}: {} -> {}",
                    prev.to_f64(),
                    v.to_f64()
                )));
            }
        }
        samples.push(PhiSample { j, s: fmt_q(&s), value: v.to_f64(), exact: v.exact().map(fmt_q) });
        last = Some(v);
    }
    let reported = samples.last().map(|s| s.value).unwrap_or(0.0);
    Ok(PhiEstimate { space: e.space.clone(), domain: e.domain, kind, samples, reported, bracket: [0.0, reported] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriState {
    Zero,
    Positive,
    Unknown,
}

/// Grid ratios `ψ(2t)/ψ(t)` at the finest nodes.
fn fine_ratios(psi: &ConcaveFn, count: usize) -> Vec<Q> {
    psi.nodes()
        .iter()
        .take(count)
        .map(|(t, _)| psi.eval(&(t * Q::from_integer(2.into()))) / psi.eval(t))
        .collect()
}

const DELTA_NUM: i64 = 101;
const DELTA_DEN: i64 = 100;

/// Behaviour of `ψ` at `0`: `Zero` when the finest ten grid ratios all
/// exceed `1.01`, `Positive` for a self-similar generator whose ratios keep
/// falling toward `1`, `Unknown` otherwise. The self-similar test runs first
/// because a truncated grid has ratios `(k+2)/(k+1)` that can still sit
/// above `1.01` at its finest level.
pub fn psi_at_zero(psi: &ConcaveFn) -> TriState {
    let r = fine_ratios(psi, 10);
    if psi.generator() == Generator::SelfSimilar && r.len() >= 2 && r.windows(2).all(|w| w[0] < w[1]) {
        return TriState::Positive;
    }
    let delta = crate::rational::qr(DELTA_NUM, DELTA_DEN);
    if !r.is_empty() && r.iter().all(|x| x > &delta) {
        TriState::Zero
    } else {
        TriState::Unknown
    }
}

/// At infinity `ψ` is affine, so `ψ(2t)/ψ(t) → 2` when its slope is positive
/// and `→ 1` when it is bounded.
pub fn psi_at_infinity(psi: &ConcaveFn) -> TriState {
    if psi.final_slope().is_positive() {
        TriState::Zero
    } else {
        TriState::Positive
    }
}

/// Tri-state verdict on `φ ≡ 0` over `M_ψ`.
pub fn marcinkiewicz_phi_zero(psi: &ConcaveFn, domain: DomainKind) -> TriState {
    let at0 = psi_at_zero(psi);
    match domain {
        DomainKind::UnitInterval => at0,
        DomainKind::SemiAxis => match (at0, psi_at_infinity(psi)) {
            (TriState::Positive, _) | (_, TriState::Positive) => TriState::Positive,
            (TriState::Zero, TriState::Zero) => TriState::Zero,
            _ => TriState::Unknown,
        },
    }
}

/// Which functional governs orbit approximation in a space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Governing {
    #[serde(rename = "phi")]
    Phi,
    #[serde(rename = "phi_fin")]
    PhiFin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Certificate {
    pub functional: Governing,
    pub verdict: TriState,
    pub rule: String,
    pub overridden: bool,
}

impl Certificate {
    /// Usable for the orbit pipeline.
    pub fn vanishes(&self) -> bool {
        self.overridden || self.verdict == TriState::Zero
    }
}

/// Space-level verdict on a functional vanishing identically over `E`.
pub fn certificate(e: &SpaceSpec, functional: Governing, override_flag: bool) -> Certificate {
    let semi = e.domain == DomainKind::SemiAxis;
    let fin = functional == Governing::PhiFin;
    let (verdict, rule) = match (&e.space, semi, fin) {
        (Space::Marcinkiewicz { psi }, false, _) | (Space::Marcinkiewicz { psi }, true, true) => {
            (psi_at_zero(psi), "dyadic ratio criterion at 0")
        }
        (Space::Marcinkiewicz { psi }, true, false) => {
            (marcinkiewicz_phi_zero(psi, DomainKind::SemiAxis), "dyadic ratio criterion at 0 and infinity")
        }
        (Space::Orlicz { .. }, false, _) => (TriState::Zero, "Orlicz spaces on the unit interval"),
        (Space::Orlicz { .. }, true, true) => (TriState::Zero, "window [0,1] reduces to the unit-interval Orlicz rule"),
        (Space::Orlicz { .. }, true, false) => (TriState::Unknown, "no rule for Orlicz spaces on the semi-axis"),
        (_, false, _) => (TriState::Zero, "L1/L-infinity norms on the unit interval"),
        (_, true, true) => (TriState::Zero, "windowed L1/L-infinity norms"),
        (Space::L1 | Space::L1CapLinf, true, false) => (TriState::Positive, "phi equals the L1 norm"),
        (Space::Linf | Space::L1PlusLinf, true, false) => (TriState::Zero, "L-infinity part dominates"),
    };
    Certificate { functional, verdict, rule: rule.to_string(), overridden: override_flag }
}

/// The governing functional: `φ_fin` on the semi-axis when `E ⊆ L1`, else `φ`.
pub fn governing_functional(e: &SpaceSpec) -> Governing {
    if e.domain == DomainKind::SemiAxis && e.subset_of_l1() {
        Governing::PhiFin
    } else {
        Governing::Phi
    }
}

pub fn governing_certificate(e: &SpaceSpec, override_flag: bool) -> Certificate {
    certificate(e, governing_functional(e), override_flag)
}

/// Fails with `PhiNotVanishing` unless the certificate vanishes.
pub fn require_vanishing(c: &Certificate) -> Result<()> {
    if c.vanishes() {
        Ok(())
    } else {
        Err(Error::PhiNotVanishing(format!("{:?} verdict {:?} ({})", c.functional, c.verdict, c.rule)))
    }
}

/// `limsup_{t→∞} K_y(t)/K_x(t)` on the semi-axis.
pub fn omega_ratio(x: &StepFunction, y: &StepFunction) -> Result<Ext> {
    if x.domain() != DomainKind::SemiAxis || y.domain() != DomainKind::SemiAxis {
        return Err(Error::domain("omega ratio is defined on the semi-axis"));
    }
    let (kx, ky) = (head_integral(x), head_integral(y));
    let (sx, sy) = (&kx.final_slope, &ky.final_slope);
    match (sx.is_zero(), sy.is_zero()) {
        (false, false) => Ok(Ext::Finite(sy / sx)),
        (false, true) => Ok(Ext::Finite(zero())),
        (true, false) => Ok(Ext::Infinite),
        (true, true) => {
            let mx = kx.limit().finite().cloned().unwrap_or_else(zero);
            if mx.is_zero() {
                return Err(Error::pre("x vanishes identically"));
            }
            let my = ky.limit().finite().cloned().unwrap_or_else(zero);
            Ok(Ext::Finite(my / mx))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStage {
    pub n: String,
    pub m: String,
    /// Normalized norm of the block, `(1/n)‖σ_n(xχ_block)·w‖`.
    pub lhs: f64,
    /// `(1 - 1/n)` times the normalized norm of the reference part.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub kind: PhiKind,
    pub degenerate: bool,
    pub stages: Vec<SplitStage>,
}

/// Dyadic scales `b` at which `x` has a breakpoint in `[2^{-b-1}, 2^{-b})`
/// (or `[2^b, 2^{b+1})` for the cut family).
fn dyadic_scales(x: &StepFunction, outward: bool) -> usize {
    let mut scales: Vec<i64> = Vec::new();
    for b in x.breakpoints().iter().skip(1) {
        if !outward && b >= &one() {
            continue;
        }
        if outward && b <= &one() {
            continue;
        }
        let mut k = 0i64;
        let mut p = one();
        if outward {
            while &(&p * Q::from_integer(2.into())) <= b {
                p *= Q::from_integer(2.into());
                k += 1;
            }
        } else {
            while &p > b {
                p /= Q::from_integer(2.into());
                k += 1;
            }
        }
        scales.push(k);
    }
    scales.sort();
    scales.dedup();
    scales.len()
}

/// Block for stage `(n, m)`.
fn block(kind: PhiKind, n: &Q, m: &Q) -> Result<IntervalUnion> {
    match kind {
        PhiKind::PhiCut => IntervalUnion::single(n.clone(), m.clone()),
        _ => IntervalUnion::single(one() / m, one() / n),
    }
}

/// Reference part the block is compared against: `[0, 1/n]`, or `[n, ∞)`
/// truncated at the end of `x` plus its tail for the cut family.
fn reference(kind: PhiKind, x: &StepFunction, n: &Q) -> Result<StepFunction> {
    match kind {
        PhiKind::PhiCut => {
            let head = IntervalUnion::single(zero(), n.clone())?;
            x.sub(&x.restrict(&head)?)
        }
        _ => x.restrict(&IntervalUnion::single(zero(), one() / n)?),
    }
}

/// Splits `x = x*` into `y + z` along alternating dyadic blocks chosen so
/// each block keeps a `(1 - 1/n)` share of the local dilation norm.
pub fn split_preserving_phi(e: &SpaceSpec, x: &StepFunction, kind: PhiKind) -> Result<(StepFunction, StepFunction, SplitReport)> {
    check_kind(x, kind)?;
    if !x.is_rearranged() {
        return Err(Error::pre("split expects a non-negative rearranged function"));
    }
    norm(e, x)?;
    let zero_fn = StepFunction::zero(x.domain());
    let outward = kind == PhiKind::PhiCut;
    let cap = dyadic_scales(x, outward);
    let trivial = |stages| Ok((x.clone(), zero_fn.clone(), SplitReport { kind, degenerate: true, stages }));
    if x.sup_abs().is_zero() || cap < 2 {
        return trivial(Vec::new());
    }
    let two = Q::from_integer(2.into());
    let mut stages = Vec::new();
    let mut blocks = Vec::new();
    let mut n = two.clone();
    // past this scale every block is constant so further stages add nothing
    let limit = pow2(cap as i64 + 2);
    while stages.len() < cap && n < limit {
        let nf = to_f64(&n);
        let base = phi_sample_value(e, &reference(kind, x, &n)?, kind, &n)?.to_f64();
        let rhs = (1.0 - 1.0 / nf) * base;
        let mut m = &n * &two;
        let mut found = None;
        for _ in 0..200 {
            let part = x.restrict(&block(kind, &n, &m)?)?;
            let lhs = phi_sample_value(e, &part, kind, &n)?.to_f64();
            if lhs >= rhs * (1.0 - 1e-12) {
                found = Some((m.clone(), lhs));
                break;
            }
            m *= &two;
        }
        let Some((m, lhs)) = found else {
            return Err(Error::Numeric(format!("no block found for n = {n}")));
        };
        blocks.push(block(kind, &n, &m)?);
        stages.push(SplitStage { n: fmt_q(&n), m: fmt_q(&m), lhs, rhs });
        n = m;
    }
    if stages.len() < 2 {
        return trivial(stages);
    }
    let even = blocks
        .iter()
        .step_by(2)
        .fold(IntervalUnion::empty(), |acc, b| acc.union(b));
    let y = x.restrict(&even)?;
    let z = x.sub(&y)?;
    Ok((y, z, SplitReport { kind, degenerate: false, stages }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qr};

    const U: DomainKind = DomainKind::UnitInterval;

    #[test]
    fn indicator_in_l1() {
        let f = StepFunction::constant(U, q(1));
        let est = phi_estimate(&SpaceSpec::l1(U), &f, PhiKind::Phi, 20).unwrap();
        assert_eq!(est.samples[20].exact.as_deref(), Some("1/1048576"));
    }

    #[test]
    fn ratio_criteria() {
        let root = ConcaveFn::power_dyadic(&qr(99, 70), 20, 0, None).unwrap();
        assert_eq!(marcinkiewicz_phi_zero(&root, U), TriState::Zero);
        let ss = ConcaveFn::self_similar(60).unwrap();
        assert_eq!(marcinkiewicz_phi_zero(&ss, U), TriState::Positive);
        assert_eq!(marcinkiewicz_phi_zero(&ConcaveFn::linear(), U), TriState::Zero);
    }

    #[test]
    fn omega_examples() {
        let s = DomainKind::SemiAxis;
        let x = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(5)], q(2)).unwrap();
        assert_eq!(omega_ratio(&x, &x).unwrap(), Ext::Finite(q(1)));
        let y = StepFunction::constant(s, q(1));
        assert_eq!(omega_ratio(&x, &y).unwrap(), Ext::Finite(qr(1, 2)));
        let x = StepFunction::semiaxis(vec![q(0), q(2)], vec![q(3)], q(0)).unwrap();
        let y = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(3)], q(0)).unwrap();
        assert_eq!(omega_ratio(&x, &y).unwrap(), Ext::Finite(qr(1, 2)));
        assert!(omega_ratio(&StepFunction::zero(s), &y).is_err());
    }

    #[test]
    fn trivial_splits() {
        let e = SpaceSpec::l1(U);
        let one_fn = StepFunction::constant(U, q(1));
        let (y, z, r) = split_preserving_phi(&e, &one_fn, PhiKind::Phi).unwrap();
        assert!(r.degenerate);
        assert_eq!(y, one_fn);
        assert_eq!(z, StepFunction::zero(U));
        let (_, _, r) = split_preserving_phi(&e, &StepFunction::zero(U), PhiKind::Phi).unwrap();
        assert!(r.degenerate);
    }
}
