//! Norms of the concrete fully symmetric spaces and the dilation `σ_τ`.

use std::fmt;

use num::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::appendix::BmOrlicz;
use crate::error::{Error, Result};
use crate::majorize::head_integral;
use crate::rational::{fmt_q, one, parse_q, pow2, qpow, qr, to_f64, zero, Q};
use crate::stepfn::{DomainKind, Piece, StepFunction};

/// How a concave function was generated; drives the Marcinkiewicz criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    SelfSimilar,
    PowerDyadic,
    Custom,
}

/// Concave increasing `ψ` with `ψ(0) = 0`, given by nodes `(t_i, ψ(t_i))`.
/// Linear through the origin below the first node, slope `final_slope`
/// beyond the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PsiSpec", into = "PsiSpec")]
pub struct ConcaveFn {
    nodes: Vec<(Q, Q)>,
    final_slope: Q,
    generator: Generator,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PsiSpec {
    /// `ψ(2^{-k}) = 1/(k+1)` for `1 <= k <= K`, `ψ(1) = 5/6`.
    SelfSimilar {
        #[serde(rename = "K")]
        k: u32,
    },
    /// `ψ(2^k) = r^k` for `-K <= k <= upper`.
    Power {
        ratio: String,
        #[serde(rename = "K")]
        k: u32,
        #[serde(default)]
        upper: u32,
        #[serde(default)]
        final_slope: Option<String>,
    },
    /// `ψ(t) = t`.
    Linear,
    Custom {
        #[serde(default = "custom_gen")]
        generator: Generator,
        nodes: Vec<(String, String)>,
        final_slope: String,
    },
}

fn custom_gen() -> Generator {
    Generator::Custom
}

impl TryFrom<PsiSpec> for ConcaveFn {
    type Error = Error;

    fn try_from(s: PsiSpec) -> Result<Self> {
        match s {
            PsiSpec::SelfSimilar { k } => ConcaveFn::self_similar(k),
            PsiSpec::Power { ratio, k, upper, final_slope } => {
                let fs = final_slope.as_deref().map(parse_q).transpose()?;
                ConcaveFn::power_dyadic(&parse_q(&ratio)?, k, upper, fs)
            }
            PsiSpec::Linear => Ok(ConcaveFn::linear()),
            PsiSpec::Custom { generator, nodes, final_slope } => {
                let nodes = nodes
                    .iter()
                    .map(|(t, p)| Ok((parse_q(t)?, parse_q(p)?)))
                    .collect::<Result<Vec<_>>>()?;
                ConcaveFn::new(nodes, parse_q(&final_slope)?, generator)
            }
        }
    }
}

impl From<ConcaveFn> for PsiSpec {
    fn from(c: ConcaveFn) -> Self {
        PsiSpec::Custom {
            generator: c.generator,
            nodes: c.nodes.iter().map(|(t, p)| (fmt_q(t), fmt_q(p))).collect(),
            final_slope: fmt_q(&c.final_slope),
        }
    }
}

impl ConcaveFn {
    pub fn new(mut nodes: Vec<(Q, Q)>, final_slope: Q, generator: Generator) -> Result<Self> {
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        if nodes.is_empty() {
            return Err(Error::domain("concave function needs at least one node"));
        }
        if nodes.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("duplicate node abscissa"));
        }
        if !nodes[0].0.is_positive() || !nodes[0].1.is_positive() {
            return Err(Error::domain("first node must have t > 0 and psi > 0"));
        }
        if final_slope.is_negative() {
            return Err(Error::domain("final slope must be non-negative"));
        }
        let c = ConcaveFn { nodes, final_slope, generator };
        let s = c.slopes();
        if s.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::domain("psi is not concave"));
        }
        if s.iter().rev().skip(1).any(|v| v.is_negative()) {
            return Err(Error::domain("psi is not increasing"));
        }
        Ok(c)
    }

    /// Dyadic grid `t = 2^{-k}`, `k = K..0`, with `ψ(2^{-k}) = 1/(k+1)` for
    /// `k >= 1`. The value at `t = 1` is lowered to `5/6` so the first
    /// segment keeps the slope `2/3` of its neighbour; `1/2` would break
    /// concavity there.
    pub fn self_similar(k_max: u32) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::domain("self-similar grid needs K >= 2"));
        }
        let mut nodes: Vec<(Q, Q)> = (1..=k_max as i64).map(|k| (pow2(-k), qr(1, k + 1))).collect();
        nodes.push((one(), qr(5, 6)));
        ConcaveFn::new(nodes, zero(), Generator::SelfSimilar)
    }

    /// `ψ(2^k) = r^k` on `-K <= k <= upper`, concave for `1 < r <= 2`.
    pub fn power_dyadic(r: &Q, k_low: u32, upper: u32, final_slope: Option<Q>) -> Result<Self> {
        if r <= &one() || r > &Q::from_integer(2.into()) {
            return Err(Error::domain("ratio must lie in (1, 2]"));
        }
        let mut nodes = Vec::new();
        for k in -(k_low as i64)..=(upper as i64) {
            let v = if k >= 0 { qpow(r, k as u32) } else { one() / qpow(r, (-k) as u32) };
            nodes.push((pow2(k), v));
        }
        ConcaveFn::new(nodes, final_slope.unwrap_or_else(zero), Generator::PowerDyadic)
    }

    pub fn linear() -> Self {
        ConcaveFn { nodes: vec![(one(), one())], final_slope: one(), generator: Generator::PowerDyadic }
    }

    pub fn nodes(&self) -> &[(Q, Q)] {
        &self.nodes
    }

    pub fn final_slope(&self) -> &Q {
        &self.final_slope
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    /// Origin slope, segment slopes, then the final slope.
    pub fn slopes(&self) -> Vec<Q> {
        let mut s = vec![&self.nodes[0].1 / &self.nodes[0].0];
        s.extend(self.nodes.windows(2).map(|w| (&w[1].1 - &w[0].1) / (&w[1].0 - &w[0].0)));
        s.push(self.final_slope.clone());
        s
    }

    pub fn eval(&self, t: &Q) -> Q {
        let i = self.nodes.partition_point(|n| &n.0 <= t);
        if i == 0 {
            return &self.nodes[0].1 * t / &self.nodes[0].0;
        }
        if i == self.nodes.len() {
            let (lt, lp) = self.nodes.last().unwrap();
            return lp + &self.final_slope * (t - lt);
        }
        let (a, b) = (&self.nodes[i - 1], &self.nodes[i]);
        &a.1 + (&b.1 - &a.1) * (t - &a.0) / (&b.0 - &a.0)
    }

    /// `ψ'` as a step function on the unit interval, including the origin piece.
    pub fn derivative_unit(&self) -> Result<StepFunction> {
        let mut pieces = Vec::new();
        let slopes = self.slopes();
        let mut lo = zero();
        for (i, (t, _)) in self.nodes.iter().enumerate() {
            if t > &one() {
                break;
            }
            pieces.push(Piece::new(lo.clone(), t.clone(), slopes[i].clone()));
            lo = t.clone();
        }
        if lo < one() {
            let i = self.nodes.partition_point(|n| n.0 <= lo);
            pieces.push(Piece::new(lo, one(), slopes[i].clone()));
        }
        StepFunction::from_pieces(DomainKind::UnitInterval, pieces, None)
    }

    /// Bounded at infinity.
    pub fn bounded(&self) -> bool {
        self.final_slope.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OrliczFn {
    Power {
        #[serde(with = "crate::rational::serde_q")]
        p: Q,
    },
    #[serde(rename = "bmexample")]
    BmExample {
        #[serde(rename = "K")]
        levels: usize,
    },
}

impl OrliczFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            OrliczFn::Power { p } if p <= &one() => Err(Error::domain("Orlicz power must exceed 1")),
            OrliczFn::BmExample { levels } => BmOrlicz::new(*levels).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Evaluator closure for `M`; arguments beyond the supported range of the
    /// iterated-exponential function give `+inf` once that exceeds float range.
    pub fn evaluator(&self) -> Result<Box<dyn Fn(f64) -> Result<f64>>> {
        Ok(match self {
            OrliczFn::Power { p } => {
                let p = to_f64(p);
                Box::new(move |t: f64| Ok(t.powf(p)))
            }
            OrliczFn::BmExample { levels } => {
                let m = BmOrlicz::new(*levels)?;
                Box::new(move |t: f64| match m.ln_eval(t) {
                    Err(Error::Range(_)) if m.ln_m_level(m.levels) > 709.0 => Ok(f64::INFINITY),
                    other => other.map(f64::exp),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space")]
pub enum Space {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "linf")]
    Linf,
    #[serde(rename = "l1capLinf")]
    L1CapLinf,
    #[serde(rename = "l1plusLinf")]
    L1PlusLinf,
    #[serde(rename = "marcinkiewicz")]
    Marcinkiewicz { psi: ConcaveFn },
    #[serde(rename = "orlicz")]
    Orlicz {
        #[serde(rename = "M")]
        m: OrliczFn,
    },
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Space::L1 => "l1",
            Space::Linf => "linf",
            Space::L1CapLinf => "l1capLinf",
            Space::L1PlusLinf => "l1plusLinf",
            Space::Marcinkiewicz { .. } => "marcinkiewicz",
            Space::Orlicz { .. } => "orlicz",
        };
        f.write_str(s)
    }
}

/// A space together with the domain it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSpec {
    pub space: Space,
    pub domain: DomainKind,
}

impl SpaceSpec {
    pub fn new(space: Space, domain: DomainKind) -> Result<Self> {
        if let Space::Orlicz { m } = &space {
            m.validate()?;
        }
        Ok(SpaceSpec { space, domain })
    }

    pub fn l1(domain: DomainKind) -> Self {
        SpaceSpec { space: Space::L1, domain }
    }

    pub fn linf(domain: DomainKind) -> Self {
        SpaceSpec { space: Space::Linf, domain }
    }

    pub fn marcinkiewicz(psi: ConcaveFn, domain: DomainKind) -> Self {
        SpaceSpec { space: Space::Marcinkiewicz { psi }, domain }
    }

    pub fn orlicz_power(p: Q, domain: DomainKind) -> Result<Self> {
        SpaceSpec::new(Space::Orlicz { m: OrliczFn::Power { p } }, domain)
    }

    /// `E ⊆ L1` by the rule table. Every space on the unit interval qualifies.
    pub fn subset_of_l1(&self) -> bool {
        match (&self.space, self.domain) {
            (_, DomainKind::UnitInterval) => true,
            (Space::L1 | Space::L1CapLinf, _) => true,
            (Space::Linf | Space::L1PlusLinf | Space::Orlicz { .. }, _) => false,
            (Space::Marcinkiewicz { psi }, _) => psi.bounded(),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.space, Space::Orlicz { .. })
    }

    /// Slack used for float comparisons of norms in this space.
    pub fn slack(&self) -> f64 {
        if self.is_exact() {
            1e-9
        } else {
            1e-8
        }
    }
}

/// An exact norm, or a Luxemburg value from bisection.
#[derive(Debug, Clone, PartialEq)]
pub enum NormValue {
    Exact(Q),
    Approx(f64),
}

impl NormValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            NormValue::Exact(q) => to_f64(q),
            NormValue::Approx(v) => *v,
        }
    }

    pub fn exact(&self) -> Option<&Q> {
        match self {
            NormValue::Exact(q) => Some(q),
            NormValue::Approx(_) => None,
        }
    }
}

impl Serialize for NormValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("value", &self.to_f64())?;
        if let NormValue::Exact(q) = self {
            m.serialize_entry("exact", &fmt_q(q))?;
        }
        m.end()
    }
}

/// `σ_τ f`: `(σ_τ f)(s) = f(s/τ)`, cut off at 1 on the unit interval.
pub fn dilate(f: &StepFunction, tau: &Q) -> Result<StepFunction> {
    if !tau.is_positive() {
        return Err(Error::pre(format!("dilation factor {tau} must be positive")));
    }
    let mut pieces: Vec<Piece> = f
        .pieces()
        .into_iter()
        .map(|p| Piece::new(&p.lo * tau, &p.hi * tau, p.value))
        .collect();
    match f.domain() {
        DomainKind::SemiAxis => StepFunction::from_pieces(DomainKind::SemiAxis, pieces, f.tail().cloned()),
        DomainKind::UnitInterval => {
            pieces.retain(|p| p.lo < one());
            for p in pieces.iter_mut() {
                if p.hi > one() {
                    p.hi = one();
                }
            }
            if tau < &one() {
                pieces.push(Piece::new(tau.clone(), one(), zero()));
            }
            StepFunction::from_pieces(DomainKind::UnitInterval, pieces, None)
        }
    }
}

fn l1_exact(f: &StepFunction, what: &str) -> Result<Q> {
    f.mass()
        .finite()
        .cloned()
        .ok_or_else(|| Error::NotInSpace(format!("{what}: function has a nonzero tail")))
}

/// `sup_t K_f(t)/ψ(t)`; `None` when unbounded.
pub fn marcinkiewicz_norm(psi: &ConcaveFn, f: &StepFunction) -> Option<Q> {
    let k = head_integral(f);
    let unit = f.domain() == DomainKind::UnitInterval;
    let mut ts: Vec<Q> = k.abscissae().cloned().chain(psi.nodes().iter().map(|n| n.0.clone())).collect();
    if unit {
        ts.push(one());
        ts.retain(|t| t <= &one());
    }
    ts.retain(|t| t.is_positive());
    ts.sort();
    ts.dedup();
    let mut best = zero();
    for t in &ts {
        let r = k.eval(t) / psi.eval(t);
        if r > best {
            best = r;
        }
    }
    if !unit {
        // both envelopes are affine past the last abscissa
        let (b, d) = (&k.final_slope, psi.final_slope());
        if d.is_zero() {
            if b.is_positive() {
                return None;
            }
        } else {
            let lim = b / d;
            if lim > best {
                best = lim;
            }
        }
    }
    Some(best)
}

/// `Σ len_i · M(|v_i|/λ)`.
pub fn orlicz_modular(m: &OrliczFn, f: &StepFunction, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::pre(format!("lambda must be positive, got {lambda}")));
    }
    let eval = m.evaluator()?;
    if f.tail().is_some_and(|t| !t.is_zero()) {
        return Err(Error::NotInSpace("Orlicz modular of a function with nonzero tail is infinite".into()));
    }
    let mut acc = 0.0;
    for p in f.pieces() {
        if p.value.is_zero() {
            continue;
        }
        let v = to_f64(&p.value.abs()) / lambda;
        acc += to_f64(&p.len()) * eval(v)?;
    }
    Ok(acc)
}

/// Luxemburg norm by bisection, starting from `λ = ‖f‖_∞`.
pub fn luxemburg_norm(m: &OrliczFn, f: &StepFunction) -> Result<f64> {
    let sup = to_f64(&f.sup_abs());
    if sup == 0.0 {
        return Ok(0.0);
    }
    let modular = |l: f64| orlicz_modular(m, f, l);
    let (mut lo, mut hi) = (sup, sup);
    let mut guard = 0;
    while modular(hi)? > 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numeric("could not bracket the Luxemburg norm from above".into()));
        }
    }
    guard = 0;
    while modular(lo)? <= 1.0 {
        lo /= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numeric("could not bracket the Luxemburg norm from below".into()));
        }
    }
    for _ in 0..400 {
        debug_assert!(modular(hi)? <= 1.0 && modular(lo)? > 1.0);
        if hi - lo <= 1e-12 * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if modular(mid)? <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Numeric("Luxemburg bisection did not converge".into()))
}

pub fn norm(e: &SpaceSpec, f: &StepFunction) -> Result<NormValue> {
    if e.domain != f.domain() {
        return Err(Error::domain(format!("space on {} applied to function on {}", e.domain, f.domain())));
    }
    Ok(match &e.space {
        Space::L1 => NormValue::Exact(l1_exact(f, "L1")?),
        Space::Linf => NormValue::Exact(f.sup_abs()),
        Space::L1CapLinf => {
            let a = l1_exact(f, "L1 ∩ L∞")?;
            NormValue::Exact(crate::rational::qmax(&a, &f.sup_abs()))
        }
        Space::L1PlusLinf => NormValue::Exact(head_integral(f).eval(&one())),
        Space::Marcinkiewicz { psi } => NormValue::Exact(
            marcinkiewicz_norm(psi, f)
                .ok_or_else(|| Error::NotInSpace("Marcinkiewicz ratio unbounded at infinity".into()))?,
        ),
        Space::Orlicz { m } => NormValue::Approx(luxemburg_norm(m, f)?),
    })
}

pub fn norm_f64(e: &SpaceSpec, f: &StepFunction) -> Result<f64> {
    norm(e, f).map(|n| n.to_f64())
}

/// Membership test: the norm exists.
pub fn contains(e: &SpaceSpec, f: &StepFunction) -> bool {
    norm(e, f).is_ok()
}

impl fmt::Display for SpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} on {}", self.space, self.domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalUnion;
    use crate::rational::q;

    const U: DomainKind = DomainKind::UnitInterval;
    const S: DomainKind = DomainKind::SemiAxis;

    #[test]
    fn dilation_examples() {
        let f = StepFunction::uniform_unit(vec![q(3), q(1)]);
        assert_eq!(dilate(&f, &q(2)).unwrap(), StepFunction::constant(U, q(3)));
        let squeezed = StepFunction::unit(vec![q(0), qr(1, 4), qr(1, 2), q(1)], vec![q(3), q(1), q(0)]).unwrap();
        assert_eq!(dilate(&f, &qr(1, 2)).unwrap(), squeezed);
        let ind = StepFunction::indicator(S, &IntervalUnion::single(q(0), q(1)).unwrap()).unwrap();
        let want = StepFunction::indicator(S, &IntervalUnion::single(q(0), q(2)).unwrap()).unwrap();
        assert_eq!(dilate(&ind, &q(2)).unwrap(), want);
        assert!(matches!(dilate(&f, &q(0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn exact_norms() {
        let f = StepFunction::semiaxis(vec![q(0), qr(1, 2), q(2)], vec![q(3), q(1)], q(0)).unwrap();
        let sum = SpaceSpec { space: Space::L1PlusLinf, domain: S };
        assert_eq!(norm(&sum, &f).unwrap(), NormValue::Exact(q(2)));
        assert_eq!(norm(&SpaceSpec::l1(S), &f).unwrap(), NormValue::Exact(qr(3, 1)));
        let t = StepFunction::constant(S, q(1));
        assert!(matches!(norm(&SpaceSpec::l1(S), &t), Err(Error::NotInSpace(_))));
    }

    #[test]
    fn marcinkiewicz_of_derivative_is_one() {
        let psi = ConcaveFn::self_similar(20).unwrap();
        let d = psi.derivative_unit().unwrap();
        let e = SpaceSpec::marcinkiewicz(psi, U);
        assert_eq!(norm(&e, &d).unwrap(), NormValue::Exact(q(1)));
    }

    #[test]
    fn concavity_is_enforced() {
        let bad = ConcaveFn::new(vec![(qr(1, 2), qr(1, 2)), (q(1), q(1))], zero(), Generator::Custom);
        assert!(bad.is_ok());
        let bad = ConcaveFn::new(vec![(qr(1, 2), qr(1, 4)), (q(1), q(1))], zero(), Generator::Custom);
        assert!(bad.is_err());
        assert!(ConcaveFn::power_dyadic(&qr(99, 70), 20, 0, None).is_ok());
    }

    #[test]
    fn orlicz_values() {
        let m = OrliczFn::Power { p: q(2) };
        let one_fn = StepFunction::constant(U, q(1));
        assert!((orlicz_modular(&m, &one_fn, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let quarter = StepFunction::unit(vec![q(0), qr(1, 4), q(1)], vec![q(2), q(0)]).unwrap();
        assert!((orlicz_modular(&m, &quarter, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let ind = StepFunction::unit(vec![q(0), qr(1, 4), q(1)], vec![q(1), q(0)]).unwrap();
        let e = SpaceSpec::orlicz_power(q(2), U).unwrap();
        assert!((norm_f64(&e, &ind).unwrap() - 0.5).abs() < 1e-12);
        assert!(orlicz_modular(&m, &one_fn, 1e6).unwrap() < 1e-6);
    }

    #[test]
    fn space_json() {
        let e: Space = serde_json::from_str(r#"{"space":"marcinkiewicz","psi":{"kind":"selfsimilar","K":8}}"#).unwrap();
        assert!(matches!(e, Space::Marcinkiewicz { .. }));
        let text = serde_json::to_string(&e).unwrap();
        let back: Space = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
        let o: Space = serde_json::from_str(r#"{"space":"orlicz","M":{"kind":"power","p":"2"}}"#).unwrap();
        assert!(matches!(o, Space::Orlicz { .. }));
        let b: Space = serde_json::from_str(r#"{"space":"orlicz","M":{"kind":"bmexample","K":3}}"#).unwrap();
        assert!(SpaceSpec::new(b, U).is_ok());
    }
}
