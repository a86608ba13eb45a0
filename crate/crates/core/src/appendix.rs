//! The iterated-exponential Orlicz function and the probes built on it.
//!
//! Levels are `a_0 = 1`, `a_{n+1} = e^{a_n}`. The function is `t^2` on
//! `(0,1)`, follows `e^t` (shifted for continuity) on `[a_{2n}, a_{2n+1}]` and
//! is affine with slope `e^{a_{2n-1}}` on `[a_{2n-1}, a_{2n}]`. Since `a_3` is
//! already about `3.8e6`, every quantity is carried as a natural logarithm:
//! `ln a_n = a_{n-1}` is representable up to `n = 4`.

use serde::{Deserialize, Serialize};

use crate::dilation::{phi_estimate, PhiEstimate, PhiKind};
use crate::error::{Error, Result};
use crate::rational::{one, pow2, q, to_f64, zero, Q};
use crate::spaces::{dilate, norm_f64, OrliczFn, Space, SpaceSpec};
use crate::stepfn::{DomainKind, StepFunction};

/// Largest supported level index.
pub const MAX_LEVELS: usize = 4;

/// `ln(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a > b`.
pub fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(e^x - 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmOrlicz {
    /// Number of levels `N`; the function is defined on `(0, a_N]`.
    pub levels: usize,
    /// `ln a_n` for `n = 0..=N`.
    ln_a: Vec<f64>,
    /// `ln M(a_n)` for `n = 0..=N`.
    ln_m_at: Vec<f64>,
}

impl BmOrlicz {
    pub fn new(levels: usize) -> Result<Self> {
        if !(1..=MAX_LEVELS).contains(&levels) {
            return Err(Error::Range(format!("levels must lie in 1..={MAX_LEVELS}, got {levels}")));
        }
        // ln a_0 = 0, ln a_{n} = a_{n-1} = exp(ln a_{n-1}).
        let mut ln_a: Vec<f64> = vec![0.0];
        for n in 1..=levels {
            ln_a.push(ln_a[n - 1].exp());
        }
        let mut ln_m_at: Vec<f64> = vec![0.0];
        for n in 1..=levels {
            let prev = ln_m_at[n - 1];
            let v = if n % 2 == 1 {
                // exponential piece from a_{n-1}: M(a_n) = M(a_{n-1}) + e^{a_{n-1}}(e^{a_n - a_{n-1}} - 1)
                let a_prev = ln_a[n - 1].exp();
                let a_n = ln_a[n].exp();
                log_add(prev, a_prev + log_expm1(a_n - a_prev))
            } else {
                // affine piece: M(a_n) = M(a_{n-1}) + e^{a_{n-1}}(a_n - a_{n-1})
                let a_prev = ln_a[n - 1].exp();
                log_add(prev, a_prev + log_sub(ln_a[n], ln_a[n - 1]))
            };
            ln_m_at.push(v);
        }
        Ok(BmOrlicz { levels, ln_a, ln_m_at })
    }

    /// `ln a_n`.
    pub fn ln_level(&self, n: usize) -> f64 {
        self.ln_a[n]
    }

    /// `ln M(a_n)`.
    pub fn ln_m_level(&self, n: usize) -> f64 {
        self.ln_m_at[n]
    }

    /// `ln M(t)` for `t` given as `ln t`.
    pub fn ln_eval_log(&self, ln_t: f64) -> Result<f64> {
        if ln_t.is_nan() {
            return Err(Error::Numeric("NaN argument".into()));
        }
        if ln_t == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if ln_t < 0.0 {
            return Ok(2.0 * ln_t);
        }
        let top = self.ln_a[self.levels];
        if ln_t > top * (1.0 + 1e-15) {
            return Err(Error::Range(format!("ln t = {ln_t} beyond ln a_{} = {top}", self.levels)));
        }
        let ln_t = ln_t.min(top);
        // piece index n with a_{n} <= t <= a_{n+1}
        let mut n = 0;
        while n + 1 < self.levels && ln_t > self.ln_a[n + 1] {
            n += 1;
        }
        let base = self.ln_m_at[n];
        if ln_t == self.ln_a[n] {
            return Ok(base);
        }
        // e^{a_n}, as a logarithm: a_n = exp(ln a_n)
        let a_n = self.ln_a[n].exp();
        Ok(if n % 2 == 0 {
            // M(t) = M(a_n) + e^{a_n}(e^{t - a_n} - 1)
            let t = ln_t.exp();
            log_add(base, a_n + log_expm1(t - a_n))
        } else {
            // M(t) = M(a_n) + e^{a_n}(t - a_n)
            log_add(base, a_n + log_sub(ln_t, self.ln_a[n]))
        })
    }

    pub fn ln_eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::domain(format!("negative argument {t}")));
        }
        self.ln_eval_log(t.ln())
    }

    /// `M(t)` as a float; `+inf` beyond the float range.
    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(self.ln_eval(t)?.exp())
    }

    /// `ln M'(t)` (right derivative) for `t` given as `ln t`.
    pub fn ln_derivative_log(&self, ln_t: f64) -> Result<f64> {
        if ln_t < 0.0 {
            return Ok(2f64.ln() + ln_t);
        }
        let top = self.ln_a[self.levels];
        if ln_t > top * (1.0 + 1e-15) {
            return Err(Error::Range(format!("ln t = {ln_t} beyond supported range")));
        }
        let mut n = 0;
        while n + 1 < self.levels && ln_t >= self.ln_a[n + 1] {
            n += 1;
        }
        Ok(if n % 2 == 0 { ln_t.exp() } else { self.ln_a[n].exp() })
    }
}

/// `(1/n)·a_{2n}` against `a_{2n}`: `ln [M(a_{2n}) / (M(a_{2n}/n)·n^p)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoydProbe {
    pub n: u32,
    pub p: f64,
    pub ln_ratio: f64,
    pub ratio: f64,
    /// `n^{1-p}`.
    pub asymptotic: f64,
    /// Set when `a_{2n}` is out of range and the asymptotic value is reported.
    pub approximate: bool,
}

pub fn boyd_ratio_probe(m: &BmOrlicz, n: u32, p: f64) -> Result<BoydProbe> {
    if n == 0 || !(p >= 1.0) {
        return Err(Error::pre(format!("need n >= 1 and p >= 1, got n={n}, p={p}")));
    }
    let nf = n as f64;
    let asymptotic = nf.powf(1.0 - p);
    let top = 2 * n as usize;
    if top > m.levels {
        if n == 3 {
            return Ok(BoydProbe { n, p, ln_ratio: asymptotic.ln(), ratio: asymptotic, asymptotic, approximate: true });
        }
        return Err(Error::Range(format!("a_{top} needs {top} levels, have {}", m.levels)));
    }
    let ln_a = m.ln_level(top);
    let ln_ratio = m.ln_m_level(top) - m.ln_eval_log(ln_a - nf.ln())? - p * nf.ln();
    Ok(BoydProbe { n, p, ln_ratio, ratio: ln_ratio.exp(), asymptotic, approximate: false })
}

/// `max_w ‖σ_τ w‖_E / (τ‖w‖_E)`: a lower bound for `‖σ_τ‖/τ`.
pub fn dilation_operator_lower_probe(e: &SpaceSpec, tau: &Q, witnesses: &[StepFunction]) -> Result<f64> {
    let mut best = 0.0f64;
    for w in witnesses {
        if w.domain() != e.domain {
            return Err(Error::domain("witness on another domain"));
        }
        let d = norm_f64(e, w)?;
        if !(d > 0.0) || !d.is_finite() {
            continue;
        }
        let num = norm_f64(e, &dilate(w, tau)?)?;
        best = best.max(num / (to_f64(tau) * d));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeCheck {
    pub points: usize,
    pub convex: bool,
    pub below_exp: bool,
    /// Largest violation of `M' ` monotonicity, relative, in log scale.
    pub worst_convexity: f64,
    pub worst_exp_bound: f64,
}

/// Samples `ln t` on each piece: `(0,1)` and `[a_n, a_{n+1}]`.
fn piece_grid(m: &BmOrlicz, per_piece: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..per_piece {
        out.push(-12.0 + 12.0 * i as f64 / per_piece as f64);
    }
    for n in 0..m.levels {
        let (lo, hi) = (m.ln_level(n), m.ln_level(n + 1));
        for i in 0..per_piece {
            out.push(lo + (hi - lo) * i as f64 / per_piece as f64);
        }
    }
    out.push(m.ln_level(m.levels));
    out
}

/// Convexity (right derivative non-decreasing, including the left limits at
/// the junctions) and `M(t) <= e^t - 1`, both compared in log scale.
pub fn shape_check(m: &BmOrlicz, per_piece: usize) -> Result<ShapeCheck> {
    let grid = piece_grid(m, per_piece);
    let mut worst_c = 0.0f64;
    let mut worst_b = 0.0f64;
    let mut prev = f64::NEG_INFINITY;
    for &lt in &grid {
        let d = m.ln_derivative_log(lt)?;
        worst_c = worst_c.max((prev - d) / d.abs().max(1.0));
        prev = d;
        let lm = m.ln_eval_log(lt)?;
        let bound = if lt > 709.0 { f64::INFINITY } else { log_expm1(lt.exp()) };
        worst_b = worst_b.max((lm - bound) / bound.abs().max(1.0));
    }
    // left limits of M' at the junctions
    let mut left = vec![2f64.ln()];
    for n in 1..m.levels {
        left.push(if n % 2 == 1 { m.ln_level(n).exp() } else { m.ln_level(n - 1).exp() });
    }
    for (n, l) in left.iter().enumerate() {
        let r = m.ln_derivative_log(m.ln_level(n))?;
        worst_c = worst_c.max((l - r) / r.abs().max(1.0));
    }
    Ok(ShapeCheck {
        points: grid.len(),
        convex: worst_c <= 1e-9,
        below_exp: worst_b <= 1e-9,
        worst_convexity: worst_c,
        worst_exp_bound: worst_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub name: String,
    pub function: StepFunction,
    pub estimate: PhiEstimate,
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub levels: usize,
    pub shape: ShapeCheck,
    /// Levels used by the ratio probes (they need `a_4`).
    pub boyd_levels: usize,
    pub boyd: Vec<BoydProbe>,
    /// `p = 3/2`: the ratio at `n = 2` is below the one at `n = 1`.
    pub boyd_decreasing: bool,
    pub witnesses: Vec<WitnessReport>,
    pub phi_decreasing: bool,
    pub passed: bool,
}

/// The three witnesses: `χ_(0,1)`, a three-level staircase and a dyadic
/// spike `2^k` on `[2^{-k-1}, 2^{-k})`.
pub fn separation_witnesses() -> Vec<(String, StepFunction)> {
    let mut bps = vec![zero()];
    let mut vals = Vec::new();
    for k in (0..8i64).rev() {
        bps.push(pow2(-k));
        vals.push(pow2(k));
    }
    vec![
        ("indicator".into(), StepFunction::constant(DomainKind::UnitInterval, one())),
        ("staircase".into(), StepFunction::uniform_unit(vec![q(3), q(2), q(1)])),
        ("dyadic".into(), StepFunction::unit(bps, vals).expect("valid dyadic witness")),
    ]
}

pub fn separation_report(levels: usize, jmax: u32) -> Result<SeparationReport> {
    let m = BmOrlicz::new(levels)?;
    let shape = shape_check(&m, 100)?;
    let big = BmOrlicz::new(MAX_LEVELS)?;
    let mut boyd = Vec::new();
    for p in [1.0, 1.5, 2.0] {
        for n in 1..=3 {
            boyd.push(boyd_ratio_probe(&big, n, p)?);
        }
    }
    let at = |n: u32, p: f64| boyd.iter().find(|b| b.n == n && b.p == p).map(|b| b.ratio).unwrap();
    let boyd_decreasing = at(2, 1.5) < at(1, 1.5);
    let e = SpaceSpec::new(Space::Orlicz { m: OrliczFn::BmExample { levels } }, DomainKind::UnitInterval)?;
    let mut witnesses = Vec::new();
    for (name, f) in separation_witnesses() {
        let estimate = phi_estimate(&e, &f, PhiKind::Phi, jmax)?;
        let s = &estimate.samples;
        let decreasing = s.windows(2).all(|w| w[1].value <= w[0].value) && s.last().unwrap().value < s[0].value;
        witnesses.push(WitnessReport { name, function: f, estimate, decreasing });
    }
    let phi_decreasing = witnesses.iter().all(|w| w.decreasing);
    let passed = shape.convex && shape.below_exp && boyd_decreasing && phi_decreasing;
    Ok(SeparationReport { levels, shape, boyd_levels: MAX_LEVELS, boyd, boyd_decreasing, witnesses, phi_decreasing, passed })
}

/// `(s, φ-sample)` rows, one block per witness.
pub fn phi_csv(r: &SeparationReport) -> String {
    let mut out = String::from("witness,j,s,phi\n");
    for w in &r.witnesses {
        for smp in &w.estimate.samples {
            out.push_str(&format!("{},{},{},{}\n", w.name, smp.j, smp.s, smp.value));
        }
    }
    out
}

/// `(n, ratio)` rows for every probed `p`.
pub fn ratio_csv(r: &SeparationReport) -> String {
    let mut out = String::from("p,n,ratio,asymptotic,approximate\n");
    for b in &r.boyd {
        out.push_str(&format!("{},{},{},{},{}\n", b.p, b.n, b.ratio, b.asymptotic, b.approximate));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn small_arguments() {
        let m = BmOrlicz::new(3).unwrap();
        assert!((m.eval(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.eval(1.0).unwrap() - 1.0).abs() < 1e-15);
        let want = E.powf(E) + 1.0 - E;
        assert!((m.eval(E).unwrap() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn levels_in_log_domain() {
        let m = BmOrlicz::new(4).unwrap();
        assert_eq!(m.ln_level(1), 1.0);
        assert!((m.ln_level(2) - E).abs() < 1e-15);
        assert!((m.ln_level(4) - E.powf(E).exp()).abs() / m.ln_level(4) < 1e-12);
        assert!(m.ln_m_level(4).is_finite());
        assert!(matches!(m.ln_eval_log(m.ln_level(4) * 1.01), Err(Error::Range(_))));
    }

    #[test]
    fn continuity_at_junctions() {
        let m = BmOrlicz::new(3).unwrap();
        for n in 1..=3 {
            let l = m.ln_level(n);
            let below = m.ln_eval_log(l - 1e-9).unwrap();
            let at = m.ln_eval_log(l).unwrap();
            assert!((below - at).abs() < 1e-6 * at.abs().max(1.0), "level {n}");
        }
    }

    #[test]
    fn boyd_ratios() {
        let m = BmOrlicz::new(4).unwrap();
        let r11 = boyd_ratio_probe(&m, 1, 1.0).unwrap();
        assert!((r11.ratio - 1.0).abs() < 1e-12);
        let a = boyd_ratio_probe(&m, 1, 1.5).unwrap().ratio;
        let b = boyd_ratio_probe(&m, 2, 1.5).unwrap().ratio;
        let c = boyd_ratio_probe(&m, 2, 2.0).unwrap().ratio;
        assert!(b < a && c < b);
        assert!((b / 2f64.powf(-0.5) - 1.0).abs() < 1e-3);
        assert!(boyd_ratio_probe(&m, 3, 1.5).unwrap().approximate);
        assert!(matches!(boyd_ratio_probe(&m, 4, 1.5), Err(Error::Range(_))));
        let small = BmOrlicz::new(3).unwrap();
        assert!(matches!(boyd_ratio_probe(&small, 2, 1.5), Err(Error::Range(_))));
    }

    #[test]
    fn dilation_probe_examples() {
        let tau = q(4);
        let w = StepFunction::unit(vec![zero(), crate::rational::qr(1, 4), one()], vec![one(), zero()]).unwrap();
        let e = SpaceSpec::orlicz_power(q(2), DomainKind::UnitInterval).unwrap();
        let v = dilation_operator_lower_probe(&e, &tau, std::slice::from_ref(&w)).unwrap();
        assert!((v - 0.5).abs() < 1e-9, "{v}");
        let e = SpaceSpec::linf(DomainKind::UnitInterval);
        assert!((dilation_operator_lower_probe(&e, &q(2), &[w]).unwrap() - 0.5).abs() < 1e-15);
        let e = SpaceSpec::l1(DomainKind::SemiAxis);
        let w = StepFunction::semiaxis(vec![zero(), one(), q(3)], vec![q(2), q(1)], zero()).unwrap();
        assert_eq!(dilation_operator_lower_probe(&e, &q(2), &[w]).unwrap(), 1.0);
    }

    #[test]
    fn shape_and_report() {
        for levels in 1..=4 {
            let s = shape_check(&BmOrlicz::new(levels).unwrap(), 100).unwrap();
            assert!(s.convex && s.below_exp, "{levels}: {s:?}");
        }
        let r = separation_report(3, 12).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(phi_csv(&r).lines().count() > 3);
        assert_eq!(ratio_csv(&r).lines().count(), 10);
    }
}
