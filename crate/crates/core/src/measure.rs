//! Probability measures on the projective line: empirical fiber measures of
//! the projective skew product, atom detection, invariant measures of a
//! single matrix, and rotation equidistribution.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::base::{distance, BasePoint, BaseSystem};
use crate::cocycle::{orbit_start, CocycleSpec};
use crate::matrix::{classify, projective_action, Mat2, MatKind, ProjPoint};

pub const DEFAULT_BINS: usize = 360;
pub const DEFAULT_MASS_FLOOR: f64 = 0.05;
pub const DEFAULT_CLUSTER_RADIUS: usize = 3;
/// Highest frequency (in `2θ`) of the weak-star test family.
pub const TEST_FREQUENCIES: usize = 16;
/// Largest denominator tried when deciding whether a rotation is rational.
pub const MAX_RATIONAL_DENOMINATOR: u64 = 10_000;
pub const RATIONAL_THRESHOLD: f64 = 1e-12;

/// Trapezoid nodes for integrating against a smooth density.
const SMOOTH_NODES: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("only {found} orbit points landed in the base ball (need {required})")]
    InsufficientSamples { found: u64, required: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A probability measure on P¹.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProjMeasure {
    /// Finitely many weighted points.
    Atoms { atoms: Vec<(ProjPoint, f64)> },
    /// Masses of equal bins partitioning `[0, π)`, uniform within a bin.
    Histogram { masses: Vec<f64> },
    /// The image of the uniform measure on `[0, π)` under `conj`
    /// (`det conj > 0`). `conj = Id` is Lebesgue.
    Smooth { conj: Mat2 },
}

impl ProjMeasure {
    pub fn dirac(p: ProjPoint) -> Self {
        ProjMeasure::Atoms { atoms: vec![(p, 1.0)] }
    }

    /// Weighted atoms, with the weights normalized to sum 1.
    pub fn atoms(atoms: Vec<(ProjPoint, f64)>) -> Result<Self, MeasureError> {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.is_empty() || atoms.iter().any(|a| !(a.1 >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(MeasureError::InvalidParameter("atom masses must be ≥ 0 with positive sum".into()));
        }
        Ok(ProjMeasure::Atoms { atoms: atoms.into_iter().map(|(p, m)| (p, m / total)).collect() })
    }

    /// `½(δ_p + δ_q)`.
    pub fn two_atoms(p: ProjPoint, q: ProjPoint) -> Self {
        ProjMeasure::Atoms { atoms: vec![(p, 0.5), (q, 0.5)] }
    }

    /// Histogram from bin weights, normalized to sum 1.
    pub fn histogram(weights: Vec<f64>) -> Result<Self, MeasureError> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(MeasureError::InvalidParameter("histogram weights must be ≥ 0 with positive sum".into()));
        }
        Ok(ProjMeasure::Histogram { masses: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn uniform_histogram(bins: usize) -> Self {
        ProjMeasure::Histogram { masses: vec![1.0 / bins as f64; bins] }
    }

    pub fn lebesgue() -> Self {
        ProjMeasure::Smooth { conj: Mat2::IDENTITY }
    }

    /// `conj_* Leb`. Orientation is irrelevant for the image of Lebesgue, so
    /// a negative determinant is absorbed by a reflection.
    pub fn smooth(conj: Mat2) -> Self {
        let conj = if conj.det() < 0.0 { conj * Mat2::diag(1.0, -1.0) } else { conj };
        ProjMeasure::Smooth { conj }
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            ProjMeasure::Atoms { atoms } => atoms.iter().map(|(p, m)| m * f(p.theta())).sum(),
            ProjMeasure::Histogram { masses } => {
                let w = PI / masses.len() as f64;
                // midpoint rule inside each bin
                masses.iter().enumerate().map(|(j, m)| m * f((j as f64 + 0.5) * w)).sum()
            }
            ProjMeasure::Smooth { conj } => {
                let h = PI / SMOOTH_NODES as f64;
                (0..SMOOTH_NODES)
                    .map(|j| f(projective_action(conj, &ProjPoint::new(j as f64 * h)).theta()))
                    .sum::<f64>()
                    / SMOOTH_NODES as f64
            }
        }
    }

    /// Integrals of the weak-star test family `cos 2kθ, sin 2kθ`,
    /// `k = 1..=16`, interleaved.
    pub fn test_integrals(&self) -> [f64; 2 * TEST_FREQUENCIES] {
        let mut out = [0.0; 2 * TEST_FREQUENCIES];
        let mut add = |theta: f64, w: f64| {
            for k in 0..TEST_FREQUENCIES {
                let (s, c) = (2.0 * (k + 1) as f64 * theta).sin_cos();
                out[2 * k] += w * c;
                out[2 * k + 1] += w * s;
            }
        };
        match self {
            ProjMeasure::Atoms { atoms } => atoms.iter().for_each(|(p, m)| add(p.theta(), *m)),
            ProjMeasure::Histogram { masses } => {
                // exact averages of the sinusoids over each bin
                let w = PI / masses.len() as f64;
                for (j, m) in masses.iter().enumerate() {
                    if *m == 0.0 {
                        continue;
                    }
                    let (a, b) = (j as f64 * w, (j + 1) as f64 * w);
                    for k in 0..TEST_FREQUENCIES {
                        let f = 2.0 * (k + 1) as f64;
                        out[2 * k] += m * ((f * b).sin() - (f * a).sin()) / (f * w);
                        out[2 * k + 1] += m * ((f * a).cos() - (f * b).cos()) / (f * w);
                    }
                }
            }
            ProjMeasure::Smooth { conj } => {
                let h = PI / SMOOTH_NODES as f64;
                for j in 0..SMOOTH_NODES {
                    let t = projective_action(conj, &ProjPoint::new(j as f64 * h)).theta();
                    add(t, 1.0 / SMOOTH_NODES as f64);
                }
            }
        }
        out
    }

    /// Masses of `bins` equal bins of `[0, π)`.
    pub fn bin_masses(&self, bins: usize) -> Vec<f64> {
        let mut out = vec![0.0; bins];
        match self {
            ProjMeasure::Atoms { atoms } => {
                for (p, m) in atoms {
                    out[bin_of(p.theta(), bins)] += m;
                }
            }
            ProjMeasure::Histogram { masses } if masses.len() == bins => out.copy_from_slice(masses),
            ProjMeasure::Histogram { masses } => {
                // spread each source bin over the target bins it overlaps
                let (src, dst) = (masses.len() as f64, bins as f64);
                for (j, m) in masses.iter().enumerate() {
                    let (a, b) = (j as f64 / src, (j + 1) as f64 / src);
                    let first = (a * dst).floor() as usize;
                    let last = ((b * dst).ceil() as usize).min(bins);
                    for (i, o) in out.iter_mut().enumerate().take(last).skip(first) {
                        let lo = a.max(i as f64 / dst);
                        let hi = b.min((i + 1) as f64 / dst);
                        if hi > lo {
                            *o += m * (hi - lo) * src;
                        }
                    }
                }
            }
            ProjMeasure::Smooth { conj } => {
                // mass of an arc = normalized length of its preimage arc
                let inv = conj.inverse();
                let pre: Vec<f64> = (0..=bins)
                    .map(|i| projective_action(&inv, &ProjPoint::new(i as f64 * PI / bins as f64)).theta())
                    .collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (pre[i + 1] - pre[i]).rem_euclid(PI) / PI;
                }
            }
        }
        out
    }

    /// The image measure under the projective action of `m`.
    pub fn push_forward(&self, m: &Mat2) -> ProjMeasure {
        match self {
            ProjMeasure::Atoms { atoms } => {
                ProjMeasure::Atoms { atoms: atoms.iter().map(|(p, w)| (projective_action(m, p), *w)).collect() }
            }
            ProjMeasure::Histogram { masses } => {
                const SUB: usize = 32;
                let bins = masses.len();
                let w = PI / bins as f64;
                let mut out = vec![0.0; bins];
                for (j, mass) in masses.iter().enumerate() {
                    for s in 0..SUB {
                        let t = (j as f64 + (s as f64 + 0.5) / SUB as f64) * w;
                        out[bin_of(projective_action(m, &ProjPoint::new(t)).theta(), bins)] += mass / SUB as f64;
                    }
                }
                ProjMeasure::Histogram { masses: out }
            }
            ProjMeasure::Smooth { conj } => ProjMeasure::smooth(*m * *conj),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            ProjMeasure::Atoms { atoms } => atoms.iter().map(|a| a.1).sum(),
            ProjMeasure::Histogram { masses } => masses.iter().sum(),
            ProjMeasure::Smooth { .. } => 1.0,
        }
    }

    /// `bin_center mass` lines for `bins` bins.
    pub fn to_columns(&self, bins: usize) -> String {
        let w = PI / bins as f64;
        self.bin_masses(bins)
            .iter()
            .enumerate()
            .map(|(j, m)| format!("{} {}\n", (j as f64 + 0.5) * w, m))
            .collect()
    }
}

fn bin_of(theta: f64, bins: usize) -> usize {
    ((theta / PI * bins as f64) as usize).min(bins - 1)
}

/// Max discrepancy over the 32 test functions.
pub fn weak_star_distance(a: &ProjMeasure, b: &ProjMeasure) -> f64 {
    let (ia, ib) = (a.test_integrals(), b.test_integrals());
    ia.iter().zip(&ib).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Total variation between the `bins`-bin discretizations.
pub fn total_variation(a: &ProjMeasure, b: &ProjMeasure, bins: usize) -> f64 {
    let (ma, mb) = (a.bin_masses(bins), b.bin_masses(bins));
    0.5 * ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberMeasureConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub bins: usize,
    /// Radius of the base ball standing in for the fiber over `x`.
    pub radius: f64,
    /// Orbit 0 starts at `x`, further orbits at seeded samples of the base.
    pub orbits: u64,
    pub seed: u64,
    pub initial: ProjPoint,
    pub min_samples: u64,
}

impl Default for FiberMeasureConfig {
    fn default() -> Self {
        Self {
            iterations: 1_000_000,
            burn_in: 1_000,
            bins: DEFAULT_BINS,
            radius: 0.02,
            orbits: 1,
            seed: 0,
            initial: ProjPoint::new(1.0),
            min_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub measure: ProjMeasure,
    pub samples: u64,
}

/// Histogram of the fiber coordinate of the projective skew-product orbit,
/// recorded at times after burn-in when the base point is within
/// `cfg.radius` of `x`.
pub fn empirical_fiber_measure(
    spec: &CocycleSpec,
    sys: &BaseSystem,
    x: &BasePoint,
    cfg: &FiberMeasureConfig,
) -> Result<EmpiricalMeasure, MeasureError> {
    if cfg.iterations <= cfg.burn_in {
        return Err(MeasureError::InvalidParameter("iterations must exceed burn_in".into()));
    }
    if cfg.bins == 0 || cfg.orbits == 0 || !(cfg.radius > 0.0) {
        return Err(MeasureError::InvalidParameter("bins, orbits and radius must be positive".into()));
    }
    let counts: Vec<Vec<u64>> = (0..cfg.orbits)
        .into_par_iter()
        .map(|j| {
            let mut z = if j == 0 { x.clone() } else { orbit_start(sys, cfg.seed, j) };
            let mut w = cfg.initial.vector();
            let mut counts = vec![0u64; cfg.bins];
            for k in 0..cfg.iterations {
                if k >= cfg.burn_in && distance(&z, x) <= cfg.radius {
                    counts[bin_of(ProjPoint::from_vector(w).theta(), cfg.bins)] += 1;
                }
                w = spec.eval(sys, &z).apply(w);
                let n = w[0].hypot(w[1]);
                w = [w[0] / n, w[1] / n];
                sys.advance(&mut z, 1);
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; cfg.bins];
    for c in &counts {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    let samples: u64 = total.iter().sum();
    if samples < cfg.min_samples {
        return Err(MeasureError::InsufficientSamples { found: samples, required: cfg.min_samples });
    }
    let measure = ProjMeasure::histogram(total.iter().map(|&c| c as f64).collect())?;
    Ok(EmpiricalMeasure { measure, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomVerdict {
    Atomic(usize),
    Diffuse,
    Mixed,
}

impl fmt::Display for AtomVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomVerdict::Atomic(j) => write!(f, "atomic({j})"),
            AtomVerdict::Diffuse => f.write_str("diffuse"),
            AtomVerdict::Mixed => f.write_str("mixed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomReport {
    pub atoms: Vec<(ProjPoint, f64)>,
    pub diffuse_mass: f64,
    pub verdict: AtomVerdict,
}

impl AtomReport {
    /// Largest `|mass − 1/j|` over the detected atoms.
    pub fn equal_mass_deviation(&self) -> f64 {
        let j = self.atoms.len() as f64;
        self.atoms.iter().map(|a| (a.1 - 1.0 / j).abs()).fold(0.0, f64::max)
    }
}

/// Bins of mass at least `mass_floor` seed atoms; seeds within
/// `cluster_radius` bins (circularly) merge, and an atom collects the mass
/// within `cluster_radius` of its seeds. Atom measures are read at
/// [`DEFAULT_BINS`] resolution.
pub fn detect_atoms(m: &ProjMeasure, mass_floor: f64, cluster_radius: usize) -> AtomReport {
    let masses = match m {
        ProjMeasure::Histogram { masses } => masses.clone(),
        other => other.bin_masses(DEFAULT_BINS),
    };
    let bins = masses.len();
    let w = PI / bins as f64;
    let heavy: Vec<usize> = (0..bins).filter(|&i| masses[i] >= mass_floor).collect();
    // group heavy bins whose circular gap is at most cluster_radius
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in &heavy {
        match clusters.last_mut() {
            Some(c) if i - c[c.len() - 1] <= cluster_radius => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    if clusters.len() > 1 {
        let (first, last) = (clusters[0][0], *clusters[clusters.len() - 1].last().unwrap());
        if first + bins - last <= cluster_radius {
            let tail = clusters.pop().unwrap();
            clusters[0].splice(0..0, tail);
        }
    }
    let mut taken = vec![false; bins];
    let mut atoms = Vec::new();
    for c in &clusters {
        let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
        let r = cluster_radius as isize;
        for &seed in c {
            for off in -r..=r {
                let i = (seed as isize + off).rem_euclid(bins as isize) as usize;
                if !taken[i] {
                    taken[i] = true;
                    let theta = (i as f64 + 0.5) * w;
                    mass += masses[i];
                    // mean on the doubled angle respects the identification θ ~ θ + π
                    sx += masses[i] * (2.0 * theta).cos();
                    sy += masses[i] * (2.0 * theta).sin();
                }
            }
        }
        atoms.push((ProjPoint::new(0.5 * sy.atan2(sx)), mass));
    }
    let atom_mass: f64 = atoms.iter().map(|a| a.1).sum();
    let diffuse_mass = (masses.iter().sum::<f64>() - atom_mass).max(0.0);
    let j = atoms.len();
    let verdict = if j == 0 {
        AtomVerdict::Diffuse
    } else if atom_mass >= 1.0 - mass_floor
        && atoms.iter().all(|a| (a.1 - 1.0 / j as f64).abs() <= 0.1 / j as f64)
    {
        AtomVerdict::Atomic(j)
    } else {
        AtomVerdict::Mixed
    };
    AtomReport { atoms, diffuse_mass, verdict }
}

/// A rotation number `p/q` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Rational {
    pub p: u64,
    pub q: u64,
}

/// Decides whether `r ∈ [0, 1)` is rational by walking its continued
/// fraction convergents up to denominator [`MAX_RATIONAL_DENOMINATOR`] and
/// accepting one within [`RATIONAL_THRESHOLD`]. A heuristic: floating point
/// cannot certify irrationality.
pub fn rational_approximation(r: f64) -> Option<Rational> {
    let r = r.rem_euclid(1.0);
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut x = r;
    loop {
        let a = x.floor();
        if a > MAX_RATIONAL_DENOMINATOR as f64 {
            return None;
        }
        let a = a as u64;
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if q2 > MAX_RATIONAL_DENOMINATOR {
            return None;
        }
        if (r - p2 as f64 / q2 as f64).abs() < RATIONAL_THRESHOLD {
            return Some(if p2 == q2 { Rational { p: 0, q: 1 } } else { Rational { p: p2, q: q2 } });
        }
        let frac = x - a as f64;
        if frac <= 0.0 {
            return None;
        }
        x = 1.0 / frac;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
}

/// `L = P·R_φ·P⁻¹` with `det P = 1` and `φ ∈ (−π, π)`, for elliptic `L`.
/// On P¹ this is a rotation by `φ mod π`.
pub fn elliptic_normal_form(l: &Mat2) -> Option<(Mat2, f64)> {
    let half = 0.5 * l.trace();
    if !(half.abs() < 1.0) {
        return None;
    }
    let phi = half.acos();
    let s = phi.sin();
    // columns e₁ and (L e₁ − cos φ·e₁)/sin φ
    let mut p = Mat2::new(1.0, (l.a - half) / s, 0.0, l.c / s);
    let mut phi = phi;
    if p.det() < 0.0 {
        p = Mat2::new(p.a, -p.b, p.c, -p.d);
        phi = -phi;
    }
    let d = p.det();
    if !(d > 0.0) {
        return None;
    }
    Some((p.scale(1.0 / d.sqrt()), phi))
}

/// The invariant probability measures of a matrix acting on P¹.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InvariantSet {
    /// Every probability measure is invariant.
    All,
    /// Extreme invariant measures; the invariant set is their closed convex
    /// hull. For rational rotations only a grid of periodic orbits is
    /// returned.
    Extremes { measures: Vec<ProjMeasure>, rotation: Option<Rational> },
}

/// Number of periodic orbits sampled for a rational rotation.
const ORBIT_SEEDS: usize = 8;

pub fn invariant_measure_of_matrix(l: &Mat2, tol: f64) -> InvariantSet {
    let class = classify(l, tol);
    match class.kind {
        MatKind::Identity => InvariantSet::All,
        MatKind::Hyperbolic | MatKind::Parabolic => InvariantSet::Extremes {
            measures: class.fixed_points.iter().map(|p| ProjMeasure::dirac(*p)).collect(),
            rotation: None,
        },
        MatKind::Elliptic => {
            let Some((p, phi)) = elliptic_normal_form(l) else {
                return InvariantSet::Extremes { measures: vec![ProjMeasure::lebesgue()], rotation: None };
            };
            match rational_approximation((phi / PI).rem_euclid(1.0)) {
                Some(r) if r.p == 0 => InvariantSet::All,
                Some(r) => {
                    let step = PI / r.q as f64;
                    let measures = (0..ORBIT_SEEDS)
                        .map(|s| {
                            let start = s as f64 * step / ORBIT_SEEDS as f64;
                            let w = 1.0 / r.q as f64;
                            ProjMeasure::Atoms {
                                atoms: (0..r.q)
                                    .map(|j| (projective_action(&p, &ProjPoint::new(start + j as f64 * step)), w))
                                    .collect(),
                            }
                        })
                        .collect();
                    InvariantSet::Extremes { measures, rotation: Some(r) }
                }
                None => InvariantSet::Extremes { measures: vec![ProjMeasure::smooth(p)], rotation: None },
            }
        }
    }
}

/// Weak-star distance from `target` to the invariant set. With two
/// extremes the segment between them is searched; with more, the extremes
/// and their barycenter are tried.
pub fn distance_to_invariant_set(set: &InvariantSet, target: &ProjMeasure) -> f64 {
    let t = target.test_integrals();
    let dist = |v: &[f64]| v.iter().zip(&t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    match set {
        InvariantSet::All => 0.0,
        InvariantSet::Extremes { measures, .. } => {
            let ints: Vec<_> = measures.iter().map(|m| m.test_integrals()).collect();
            match ints.len() {
                0 => f64::INFINITY,
                1 => dist(&ints[0]),
                2 => {
                    // convex in the mixing weight: golden-section search
                    let mix = |s: f64| -> f64 {
                        let v: Vec<f64> = ints[0].iter().zip(&ints[1]).map(|(a, b)| s * a + (1.0 - s) * b).collect();
                        dist(&v)
                    };
                    let g = 0.5 * (5f64.sqrt() - 1.0);
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..100 {
                        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
                        if mix(a) <= mix(b) {
                            hi = b;
                        } else {
                            lo = a;
                        }
                    }
                    mix(0.5 * (lo + hi)).min(mix(0.0)).min(mix(1.0))
                }
                k => {
                    let bary: Vec<f64> =
                        (0..t.len()).map(|i| ints.iter().map(|v| v[i]).sum::<f64>() / k as f64).collect();
                    ints.iter().map(|v| dist(v)).fold(dist(&bary), f64::min)
                }
            }
        }
    }
}

/// `|(1/q)·Σ φ(j/q) − ∫₀¹ φ|`, the integral by composite 16-point
/// Gauss–Legendre quadrature on 4096 panels.
pub fn rational_rotation_equidistribution(q: u64, phi: impl Fn(f64) -> f64) -> f64 {
    assert!(q >= 1, "q must be ≥ 1");
    let riemann = (0..q).map(|j| phi(j as f64 / q as f64)).sum::<f64>() / q as f64;
    (riemann - integrate_unit(&phi)).abs()
}

/// `∫₀¹ φ`, composite Gauss–Legendre.
pub fn integrate_unit(phi: impl Fn(f64) -> f64) -> f64 {
    const PANELS: usize = 4096;
    let (nodes, weights) = gauss_legendre(16);
    let h = 1.0 / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let mid = (i as f64 + 0.5) * h;
            nodes.iter().zip(&weights).map(|(x, w)| w * phi(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Elliptic,
    Parabolic,
    Hyperbolic,
}

impl std::str::FromStr for SequenceKind {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elliptic" => Ok(SequenceKind::Elliptic),
            "parabolic" => Ok(SequenceKind::Parabolic),
            "hyperbolic" => Ok(SequenceKind::Hyperbolic),
            other => Err(MeasureError::InvalidParameter(format!("unknown sequence kind {other:?}"))),
        }
    }
}

/// Fixed conjugator for the elliptic witness sequence.
pub const ELLIPTIC_CONJUGATOR: Mat2 = Mat2::new(1.0, 0.5, 0.0, 1.0);

/// The `n`-th matrix of a sequence tending to the identity.
pub fn witness_matrix(kind: SequenceKind, n: u64, p: ProjPoint, q: ProjPoint) -> Mat2 {
    let t = 1.0 / n as f64;
    match kind {
        SequenceKind::Elliptic => ELLIPTIC_CONJUGATOR * Mat2::rotation(t) * ELLIPTIC_CONJUGATOR.inverse(),
        SequenceKind::Parabolic => Mat2::new(1.0, t, 0.0, 1.0),
        SequenceKind::Hyperbolic => {
            let (vp, vq) = (p.vector(), q.vector());
            let c = Mat2::new(vp[0], vq[0], vp[1], vq[1]);
            let e = 1.0 + t;
            c * Mat2::diag(e, 1.0 / e) * c.inverse()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop31Report {
    pub kind: SequenceKind,
    pub n_max: u64,
    /// `min_n` of the distance from `½(δ_p + δ_q)` to the invariant set of `L_n`.
    pub gap: f64,
    pub max_distance: f64,
    /// `max_n` of the weak-star distance between `L_n·½(δ_p + δ_q)` and itself.
    pub target_invariance_residual: f64,
    /// Kinds reported by the classifier along the sequence.
    pub kinds: Vec<MatKind>,
}

/// For `n = 1..=n_max`, how far `½(δ_p + δ_q)` is from being invariant
/// under the `n`-th matrix of a sequence `L_n → Id` of the given kind.
pub fn prop31_witness(kind: SequenceKind, n_max: u64, p: ProjPoint, q: ProjPoint, tol: f64) -> Result<Prop31Report, MeasureError> {
    if p.dist(&q) == 0.0 {
        return Err(MeasureError::InvalidParameter("p and q must differ".into()));
    }
    if n_max == 0 {
        return Err(MeasureError::InvalidParameter("n_max must be ≥ 1".into()));
    }
    let target = ProjMeasure::two_atoms(p, q);
    let rows: Vec<(f64, f64, MatKind)> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let l = witness_matrix(kind, n, p, q);
            let set = invariant_measure_of_matrix(&l, tol);
            let d = distance_to_invariant_set(&set, &target);
            let r = weak_star_distance(&target.push_forward(&l), &target);
            (d, r, classify(&l, tol).kind)
        })
        .collect();
    let mut kinds: Vec<MatKind> = Vec::new();
    for r in &rows {
        if !kinds.contains(&r.2) {
            kinds.push(r.2);
        }
    }
    Ok(Prop31Report {
        kind,
        n_max,
        gap: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        max_distance: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        target_invariance_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        kinds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::GOLDEN_MEAN;
    use crate::matrix::DEFAULT_CLASSIFY_TOL;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn theta(t: f64) -> ProjPoint {
        ProjPoint::new(t)
    }

    #[test]
    fn weak_star_sanity() {
        let ms = [
            ProjMeasure::dirac(theta(0.3)),
            ProjMeasure::lebesgue(),
            ProjMeasure::uniform_histogram(360),
            ProjMeasure::smooth(Mat2::new(2.0, 1.0, 1.0, 1.0)),
        ];
        for m in &ms {
            assert_eq!(weak_star_distance(m, m), 0.0);
            assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(m.bin_masses(90).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        assert!(weak_star_distance(&ms[0], &ProjMeasure::dirac(theta(0.31))) > 0.0);
        // the uniform histogram and Lebesgue agree on every test function
        assert!(weak_star_distance(&ms[1], &ms[2]) < 1e-12);
        assert!(total_variation(&ms[1], &ms[2], 360) < 1e-12);
    }

    #[test]
    fn smooth_integrals_match_closed_form() {
        // exact arc masses on a fine grid vs the trapezoid rule
        let m = ProjMeasure::smooth(Mat2::diag(1.5, 1.0 / 1.5));
        let from_bins = ProjMeasure::Histogram { masses: m.bin_masses(20_000) }.test_integrals();
        let direct = m.test_integrals();
        for (a, b) in from_bins.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn atom_detection_examples() {
        let two = ProjMeasure::two_atoms(theta(0.0), theta(PI / 2.0));
        let r = detect_atoms(&two, DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Atomic(2));
        assert!(r.equal_mass_deviation() < 1e-12);

        let r = detect_atoms(&ProjMeasure::uniform_histogram(360), DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Diffuse);
        assert_abs_diff_eq!(r.diffuse_mass, 1.0, epsilon = 1e-12);

        let mut masses = vec![0.5 / 360.0; 360];
        masses[0] += 0.5;
        let r = detect_atoms(&ProjMeasure::histogram(masses).unwrap(), DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Mixed);
        assert_eq!(r.atoms.len(), 1);
        assert!(r.atoms[0].0.dist(&theta(0.0)) < 0.01);
    }

    #[test]
    fn atoms_straddling_zero_merge() {
        let m = ProjMeasure::atoms(vec![(theta(0.001), 0.5), (theta(PI - 0.001), 0.5)]).unwrap();
        let r = detect_atoms(&m, DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Atomic(1));
        assert!(r.atoms[0].0.dist(&theta(0.0)) < 1e-9);
    }

    #[test]
    fn invariant_measure_examples() {
        let tol = DEFAULT_CLASSIFY_TOL;
        let InvariantSet::Extremes { measures, .. } = invariant_measure_of_matrix(&Mat2::diag(2.0, 0.5), tol) else {
            panic!()
        };
        assert_eq!(measures.len(), 2);
        assert!(weak_star_distance(&measures[0], &ProjMeasure::dirac(theta(0.0))) < 1e-12);
        assert!(weak_star_distance(&measures[1], &ProjMeasure::dirac(theta(PI / 2.0))) < 1e-12);

        let InvariantSet::Extremes { measures, .. } = invariant_measure_of_matrix(&Mat2::shear(1.0), tol) else {
            panic!()
        };
        assert_eq!(measures, vec![ProjMeasure::dirac(theta(0.0))]);

        assert_eq!(invariant_measure_of_matrix(&Mat2::IDENTITY, tol), InvariantSet::All);

        let golden = Mat2::rotation(PI * (5f64.sqrt() - 1.0) / 2.0);
        let InvariantSet::Extremes { measures, rotation } = invariant_measure_of_matrix(&golden, tol) else {
            panic!()
        };
        assert_eq!(rotation, None);
        assert!(weak_star_distance(&measures[0], &ProjMeasure::lebesgue()) < 1e-12);
        // orbit of an irrational rotation equidistributes
        let mut v = theta(0.4);
        let mut atoms = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            atoms.push((v, 1.0));
            v = projective_action(&golden, &v);
        }
        let orbit = ProjMeasure::atoms(atoms).unwrap();
        assert!(weak_star_distance(&orbit, &measures[0]) < 1e-3);
    }

    #[test]
    fn rational_rotations_are_recognized() {
        let r = Mat2::rotation(2.0 * PI / 5.0);
        let InvariantSet::Extremes { measures, rotation } = invariant_measure_of_matrix(&r, 1e-9) else {
            panic!()
        };
        // the rotation by 2π/5 moves lines by 2π/5 mod π = (2/5)·π
        assert_eq!(rotation, Some(Rational { p: 2, q: 5 }));
        for m in &measures {
            assert!(weak_star_distance(&m.push_forward(&r), m) < 1e-12);
        }
        assert_eq!(rational_approximation(0.75), Some(Rational { p: 3, q: 4 }));
        assert_eq!(rational_approximation(GOLDEN_MEAN), None);
        assert_eq!(rational_approximation(std::f64::consts::E - 2.0), None);
    }

    #[test]
    fn elliptic_normal_form_reconstructs() {
        let p = Mat2::new(2.0, 1.0, 0.3, 0.65);
        let l = p * Mat2::rotation(0.9) * p.inverse();
        let (q, phi) = elliptic_normal_form(&l).unwrap();
        assert_abs_diff_eq!(q.det(), 1.0, epsilon = 1e-12);
        assert!((q * Mat2::rotation(phi) * q.inverse()).dist(&l) < 1e-12);
        let (q, phi) = elliptic_normal_form(&l.inverse()).unwrap();
        assert!((q * Mat2::rotation(phi) * q.inverse()).dist(&l.inverse()) < 1e-12);
    }

    #[test]
    fn equidistribution_examples() {
        for q in [1, 10, 1000] {
            assert!(rational_rotation_equidistribution(q, |_| 1.0) < 1e-14);
        }
        assert!(rational_rotation_equidistribution(1000, |x| (2.0 * PI * x).cos()) < 1e-12);
        for q in [10, 100, 1000] {
            let e = rational_rotation_equidistribution(q, |x| (x - 0.5).abs());
            assert!(e <= 1.0 / q as f64, "q={q} e={e}");
        }
        assert_abs_diff_eq!(integrate_unit(|x| x * x), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn empirical_measure_examples() {
        let rot = BaseSystem::golden_rotation();
        let x = BasePoint::circle(0.3);
        let cfg = FiberMeasureConfig { iterations: 200_000, ..Default::default() };
        let m = empirical_fiber_measure(&CocycleSpec::constant(Mat2::diag(2.0, 0.5)), &rot, &x, &cfg).unwrap();
        let r = detect_atoms(&m.measure, DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Atomic(1));
        assert!(r.atoms[0].1 >= 0.99);
        assert!(r.atoms[0].0.dist(&theta(0.0)) < 0.01);

        let m = empirical_fiber_measure(&CocycleSpec::constant(Mat2::IDENTITY), &rot, &x, &cfg).unwrap();
        let r = detect_atoms(&m.measure, DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
        assert_eq!(r.verdict, AtomVerdict::Atomic(1));
        assert!(r.atoms[0].0.dist(&cfg.initial) < 0.01);

        // the base rotation must not resonate with the fiber rotation, else
        // returns to the ball see a single fiber angle
        let spin = CocycleSpec::constant(Mat2::rotation(2.0 * PI * GOLDEN_MEAN));
        let cfg = FiberMeasureConfig { iterations: 1_000_000, ..Default::default() };
        let base = BaseSystem::rotation(2f64.sqrt() - 1.0);
        let m = empirical_fiber_measure(&spin, &base, &x, &cfg).unwrap();
        assert!(total_variation(&m.measure, &ProjMeasure::lebesgue(), 360) < 0.05);
    }

    #[test]
    fn empirical_measure_errors() {
        let rot = BaseSystem::golden_rotation();
        let spec = CocycleSpec::constant(Mat2::IDENTITY);
        let x = BasePoint::circle(0.3);
        let short = FiberMeasureConfig { iterations: 1000, burn_in: 10, ..Default::default() };
        assert!(matches!(
            empirical_fiber_measure(&spec, &rot, &x, &short),
            Err(MeasureError::InsufficientSamples { .. })
        ));
        let bad = FiberMeasureConfig { iterations: 10, burn_in: 10, ..Default::default() };
        assert!(matches!(empirical_fiber_measure(&spec, &rot, &x, &bad), Err(MeasureError::InvalidParameter(_))));
    }

    #[test]
    fn empirical_measure_merges_orbits_deterministically() {
        let cat = BaseSystem::cat_map();
        let spec = CocycleSpec::constant(Mat2::diag(2.0, 0.5));
        let cfg = FiberMeasureConfig { iterations: 50_000, orbits: 4, seed: 9, radius: 0.1, ..Default::default() };
        let x = BasePoint::torus(0.2, 0.6);
        let a = empirical_fiber_measure(&spec, &cat, &x, &cfg).unwrap();
        let b = empirical_fiber_measure(&spec, &cat, &x, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prop31_examples() {
        let (p, q) = (theta(PI / 4.0), theta(PI / 2.0));
        let tol = DEFAULT_CLASSIFY_TOL;
        let h = prop31_witness(SequenceKind::Hyperbolic, 200, p, q, tol).unwrap();
        assert!(h.max_distance < 1e-9 && h.target_invariance_residual < 1e-12);
        assert_eq!(h.kinds, vec![MatKind::Hyperbolic]);
        let par = prop31_witness(SequenceKind::Parabolic, 200, p, q, tol).unwrap();
        assert!(par.gap >= 0.1);
        let ell = prop31_witness(SequenceKind::Elliptic, 200, p, q, tol).unwrap();
        assert!(ell.gap >= 0.1);
        assert!(prop31_witness(SequenceKind::Parabolic, 10, p, p, tol).is_err());
    }

    fn sl_matrix() -> impl Strategy<Value = Mat2> {
        (-3.0f64..3.0, 0.0f64..PI, 0.2f64..3.0).prop_map(|(tr, a, s)| {
            // companion form of the trace, conjugated
            let m = Mat2::new(0.0, -1.0, 1.0, tr);
            let c = Mat2::rotation(a) * Mat2::diag(s, 1.0 / s);
            c * m * c.inverse()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariant_measures_are_invariant(l in sl_matrix()) {
            if let InvariantSet::Extremes { measures, .. } = invariant_measure_of_matrix(&l, DEFAULT_CLASSIFY_TOL) {
                for m in &measures {
                    prop_assert!(weak_star_distance(&m.push_forward(&l), m) <= 1e-6);
                }
            }
        }

        #[test]
        fn lipschitz_equidistribution(q in 1u64..2000, c in 0.0f64..1.0, k in 1.0f64..5.0) {
            // |x − c| wrapped has Lipschitz constant 1; k·sin(2πx) has 2πk
            let e = rational_rotation_equidistribution(q, |x| (x - c).abs());
            prop_assert!(e <= 1.0 / q as f64 + 1e-14);
            let e = rational_rotation_equidistribution(q, |x| k * (2.0 * PI * x).sin() + (x - c).abs());
            prop_assert!(e <= (2.0 * PI * k + 1.0) / q as f64 + 1e-14);
        }

        #[test]
        fn atom_masses_are_equal_when_atomic(j in 1usize..6, shift in 0.0f64..PI) {
            let atoms = (0..j).map(|i| (theta(shift + i as f64 * PI / j as f64), 1.0)).collect();
            let r = detect_atoms(&ProjMeasure::atoms(atoms).unwrap(), DEFAULT_MASS_FLOOR, DEFAULT_CLUSTER_RADIUS);
            prop_assert_eq!(r.verdict, AtomVerdict::Atomic(j));
            prop_assert!(r.equal_mass_deviation() <= 0.1 / j as f64);
        }

        #[test]
        fn weak_star_separates_points(a in 0.0f64..PI, b in 0.0f64..PI) {
            let (p, q) = (ProjMeasure::dirac(theta(a)), ProjMeasure::dirac(theta(b)));
            prop_assert_eq!(weak_star_distance(&p, &p), 0.0);
            if theta(a).dist(&theta(b)) > 1e-9 {
                prop_assert!(weak_star_distance(&p, &q) > 0.0);
            }
        }
    }
}
