//! Exact rearrangement-invariant function space toolkit on step functions.

pub mod appendix;
pub mod dilation;
pub mod error;
pub mod interval;
pub mod majorize;
pub mod orbitlab;
pub mod random;
pub mod rational;
pub mod spaces;
pub mod stepfn;
pub mod transport;

pub use dilation::{phi_estimate, PhiEstimate, PhiKind, TriState};
pub use error::{Error, Result};
pub use interval::{Interval, IntervalUnion};
pub use majorize::{head_integral, majorizes, submajorizes, HeadIntegral};
pub use orbitlab::{bm_decompose, classify_extreme, orbit_approximate, orbit_member, IntervalPairing, OrbitKind, OrbitReport};
pub use rational::{Ext, Q};
pub use spaces::{dilate, norm, ConcaveFn, NormValue, OrliczFn, Space, SpaceSpec};
pub use stepfn::{DomainKind, Piece, StepFunction};
pub use transport::{
    apply_map, partial_average, AveragingScheme, ConvexCombination, MeasurePreservingMap, Provenance, Term,
};
