//! Linear cocycles over partially hyperbolic model systems: Lyapunov
//! exponents, stable and unstable holonomies, and invariant projective
//! measures.

pub mod base;
pub mod cocycle;
pub mod constructions;
pub mod holonomy;
pub mod matrix;
pub mod measure;

pub use base::{BasePoint, BaseSystem, LeafKind, Offset, Phase, PhRates, ShiftPoint, SuLeg, SuPath};
pub use matrix::{Mat2, MatClass, MatKind, ProjPoint};
