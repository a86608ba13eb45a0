//! Head integrals `K_x(t) = ∫_0^t x*` and the (sub)majorization predicates.

use num::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{serde_q, zero, Ext, Q};
use crate::stepfn::{DomainKind, StepFunction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    #[serde(with = "serde_q")]
    pub t: Q,
    #[serde(with = "serde_q")]
    pub k: Q,
}

/// Concave piecewise-linear envelope of a rearrangement. Past the last node
/// it continues with `final_slope`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadIntegral {
    pub nodes: Vec<Node>,
    #[serde(with = "serde_q")]
    pub final_slope: Q,
}

impl HeadIntegral {
    pub fn eval(&self, t: &Q) -> Q {
        let i = self.nodes.partition_point(|n| &n.t <= t);
        if i == self.nodes.len() {
            let last = self.nodes.last().unwrap();
            return &last.k + &self.final_slope * (t - &last.t);
        }
        let (a, b) = (&self.nodes[i - 1], &self.nodes[i]);
        &a.k + (&b.k - &a.k) * (t - &a.t) / (&b.t - &a.t)
    }

    pub fn abscissae(&self) -> impl Iterator<Item = &Q> {
        self.nodes.iter().map(|n| &n.t)
    }

    pub fn last_t(&self) -> &Q {
        &self.nodes.last().unwrap().t
    }

    /// `lim_{t→∞} K(t)`.
    pub fn limit(&self) -> Ext {
        if self.final_slope.is_zero() {
            Ext::Finite(self.nodes.last().unwrap().k.clone())
        } else {
            Ext::Infinite
        }
    }

    /// Slope of each segment, followed by the final slope.
    pub fn slopes(&self) -> Vec<Q> {
        let mut s: Vec<Q> = self
            .nodes
            .windows(2)
            .map(|w| (&w[1].k - &w[0].k) / (&w[1].t - &w[0].t))
            .collect();
        s.push(self.final_slope.clone());
        s
    }
}

pub fn head_integral(f: &StepFunction) -> HeadIntegral {
    let r = f.rearrange();
    let mut nodes = vec![Node { t: zero(), k: zero() }];
    let mut acc = zero();
    for p in r.pieces() {
        acc += p.len() * &p.value;
        nodes.push(Node { t: p.hi, k: acc.clone() });
    }
    HeadIntegral { nodes, final_slope: r.tail_value() }
}

fn same_domain(x: &StepFunction, y: &StepFunction) -> Result<()> {
    if x.domain() != y.domain() {
        return Err(Error::domain(format!("mixed domains {} and {}", x.domain(), y.domain())));
    }
    Ok(())
}

/// `K_y <= K_x` everywhere, for two envelopes over the same domain.
pub fn envelope_dominated(kx: &HeadIntegral, ky: &HeadIntegral) -> bool {
    if ky.final_slope > kx.final_slope {
        return false;
    }
    let mut ts: Vec<&Q> = kx.abscissae().chain(ky.abscissae()).collect();
    ts.sort();
    ts.dedup();
    ts.into_iter().all(|t| ky.eval(t) <= kx.eval(t))
}

/// Tests `y ≺≺ x`.
pub fn submajorizes(x: &StepFunction, y: &StepFunction) -> Result<bool> {
    same_domain(x, y)?;
    Ok(envelope_dominated(&head_integral(x), &head_integral(y)))
}

fn finite_mass(f: &StepFunction, name: &str) -> Result<Q> {
    match f.mass() {
        Ext::Finite(m) => Ok(m),
        Ext::Infinite => Err(Error::pre(format!("{name} has infinite mass"))),
    }
}

/// Tests `y ≺ x`: submajorization plus equal `L1` mass.
pub fn majorizes(x: &StepFunction, y: &StepFunction) -> Result<bool> {
    same_domain(x, y)?;
    let mx = finite_mass(x, "x")?;
    let my = finite_mass(y, "y")?;
    Ok(mx == my && submajorizes(x, y)?)
}

/// True when `f >= g` pointwise.
pub fn pointwise_le(g: &StepFunction, f: &StepFunction) -> Result<bool> {
    let d = f.sub(g)?;
    Ok(d.is_nonnegative())
}

/// True when `|y| <= |x|` holds on the rearrangements.
pub fn rearranged_le(y: &StepFunction, x: &StepFunction) -> Result<bool> {
    same_domain(x, y)?;
    pointwise_le(&y.rearrange(), &x.rearrange())
}

/// Samples of the envelope gap `K_x - K_y` at the node union, useful in reports.
pub fn envelope_gap(x: &StepFunction, y: &StepFunction) -> Result<Q> {
    same_domain(x, y)?;
    let (kx, ky) = (head_integral(x), head_integral(y));
    let mut ts: Vec<&Q> = kx.abscissae().chain(ky.abscissae()).collect();
    ts.sort();
    ts.dedup();
    Ok(ts.into_iter().map(|t| kx.eval(t) - ky.eval(t)).min().unwrap_or_else(zero))
}

pub fn is_unit(f: &StepFunction) -> bool {
    f.domain() == DomainKind::UnitInterval
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qr};

    fn halves(a: i64, b: i64) -> StepFunction {
        StepFunction::uniform_unit(vec![q(a), q(b)])
    }

    #[test]
    fn envelopes() {
        let k = head_integral(&halves(4, 2));
        assert_eq!(k.nodes.len(), 3);
        assert_eq!(k.nodes[1], Node { t: qr(1, 2), k: q(2) });
        assert_eq!(k.nodes[2], Node { t: q(1), k: q(3) });
        let g = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(3)], q(1)).unwrap();
        let k = head_integral(&g);
        assert_eq!(k.final_slope, q(1));
        assert_eq!(k.eval(&q(5)), q(7));
        let one = StepFunction::constant(DomainKind::UnitInterval, q(1));
        assert_eq!(head_integral(&one).eval(&q(3)), q(1));
    }

    #[test]
    fn submajorization_examples() {
        let y = StepFunction::constant(DomainKind::UnitInterval, q(1));
        let x = halves(2, 0);
        assert!(submajorizes(&x, &y).unwrap());
        assert!(submajorizes(&x, &x).unwrap());
        assert!(submajorizes(&halves(4, 2), &halves(3, 3)).unwrap());
        assert!(!submajorizes(&halves(3, 3), &halves(4, 2)).unwrap());
    }

    #[test]
    fn majorization_examples() {
        assert!(majorizes(&halves(4, 2), &halves(3, 3)).unwrap());
        let x = halves(2, 0);
        assert!(majorizes(&x, &StepFunction::constant(DomainKind::UnitInterval, q(1))).unwrap());
        let half = StepFunction::constant(DomainKind::UnitInterval, qr(1, 2));
        assert!(!majorizes(&x, &half).unwrap());
        let t = StepFunction::constant(DomainKind::SemiAxis, q(1));
        assert!(matches!(majorizes(&t, &t), Err(Error::Precondition(_))));
    }

    #[test]
    fn semiaxis_slopes_decide_tail() {
        let x = StepFunction::semiaxis(vec![q(0), q(1)], vec![q(10)], q(1)).unwrap();
        let y = StepFunction::constant(DomainKind::SemiAxis, q(2));
        assert!(!submajorizes(&x, &y).unwrap());
        let y = StepFunction::constant(DomainKind::SemiAxis, q(1));
        assert!(submajorizes(&x, &y).unwrap());
        assert!(!submajorizes(&y, &x).unwrap());
    }
}
