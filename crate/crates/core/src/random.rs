//! Seeded generators for property suites and randomized CLI runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::interval::{Interval, IntervalUnion};
use crate::rational::{qr, zero, Q};
use crate::stepfn::{DomainKind, Piece, StepFunction};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_pieces: usize,
    /// Piece lengths are multiples of `1/len_denom`.
    pub len_denom: i64,
    /// Values are `k/value_denom` with `|k| <= value_max·value_denom`.
    pub value_denom: i64,
    pub value_max: i64,
    pub signed: bool,
    /// Chance of a nonzero tail on the semi-axis.
    pub tail_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_pieces: 12, len_denom: 12, value_denom: 4, value_max: 8, signed: false, tail_prob: 0.0 }
    }
}

impl GenConfig {
    pub fn signed(mut self) -> Self {
        self.signed = true;
        self
    }

    pub fn with_tail(mut self, p: f64) -> Self {
        self.tail_prob = p;
        self
    }

    pub fn pieces(mut self, n: usize) -> Self {
        self.max_pieces = n;
        self
    }
}

pub fn random_value(r: &mut TestRng, cfg: &GenConfig) -> Q {
    let top = cfg.value_max * cfg.value_denom;
    let k = if cfg.signed { r.gen_range(-top..=top) } else { r.gen_range(0..=top) };
    qr(k, cfg.value_denom)
}

/// Strictly increasing cut points of `(0,1)`, multiples of `1/denom`.
fn unit_cuts(r: &mut TestRng, n: usize, denom: i64) -> Vec<Q> {
    let n = n.min(denom as usize).max(1);
    let mut inner: Vec<i64> = (1..denom).collect();
    inner.shuffle(r);
    let mut chosen: Vec<i64> = inner.into_iter().take(n - 1).collect();
    chosen.sort();
    let mut out = vec![zero()];
    out.extend(chosen.into_iter().map(|k| qr(k, denom)));
    out.push(qr(1, 1));
    out
}

pub fn random_step(r: &mut TestRng, domain: DomainKind, cfg: &GenConfig) -> StepFunction {
    let n = r.gen_range(1..=cfg.max_pieces);
    match domain {
        DomainKind::UnitInterval => {
            let bps = unit_cuts(r, n, cfg.len_denom);
            let vals = (1..bps.len()).map(|_| random_value(r, cfg)).collect();
            StepFunction::unit(bps, vals).expect("valid random data")
        }
        DomainKind::SemiAxis => {
            // lengths in (0, 2], multiples of 2/len_denom
            let mut bps = vec![zero()];
            let mut acc = 0i64;
            for _ in 0..n {
                acc += r.gen_range(1..=cfg.len_denom);
                bps.push(qr(2 * acc, cfg.len_denom));
            }
            let vals = (0..n).map(|_| random_value(r, cfg)).collect();
            let tail = if r.gen_bool(cfg.tail_prob) {
                let mut t = random_value(r, cfg);
                if t == zero() {
                    t = qr(1, cfg.value_denom);
                }
                t
            } else {
                zero()
            };
            StepFunction::semiaxis(bps, vals, tail).expect("valid random data")
        }
    }
}

pub fn random_decreasing(r: &mut TestRng, domain: DomainKind, cfg: &GenConfig) -> StepFunction {
    let mut c = cfg.clone();
    c.signed = false;
    random_step(r, domain, &c).rearrange()
}

/// Random family of disjoint blocks, each a union of 1 or 2 grid intervals
/// inside `[0, end]`.
pub fn random_blocks(r: &mut TestRng, end: &Q, denom: i64, max_blocks: usize) -> Vec<IntervalUnion> {
    let cells = {
        let e = end * Q::from_integer(denom.into());
        e.floor().to_integer().try_into().unwrap_or(0i64)
    };
    if cells <= 0 {
        return Vec::new();
    }
    let mut idx: Vec<i64> = (0..cells).collect();
    idx.shuffle(r);
    let nb = r.gen_range(0..=max_blocks.min(cells as usize));
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    for _ in 0..nb {
        let take = r.gen_range(1..=2usize).min(idx.len() - pos);
        if take == 0 {
            break;
        }
        let mut parts: Vec<Interval> = Vec::new();
        for &c in &idx[pos..pos + take] {
            let width = r.gen_range(1..=3i64);
            let lo = qr(c, denom);
            let hi = qr(c * 3 + width, denom * 3);
            parts.push(Interval::new(lo, hi).unwrap());
        }
        pos += take;
        blocks.push(IntervalUnion::from_intervals(parts).unwrap());
    }
    blocks
}

/// Random permutation of the pieces of `f` (lengths preserved), as a new function.
pub fn shuffle_pieces(r: &mut TestRng, f: &StepFunction) -> StepFunction {
    let mut ps = f.pieces();
    ps.shuffle(r);
    let mut cur = zero();
    let out: Vec<Piece> = ps
        .into_iter()
        .map(|p| {
            let hi = &cur + p.len();
            let q = Piece::new(cur.clone(), hi.clone(), p.value);
            cur = hi;
            q
        })
        .collect();
    StepFunction::from_pieces(f.domain(), out, f.tail().cloned()).unwrap()
}
