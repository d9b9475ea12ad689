//! Cocycle generators, products `Aⁿ(x)`, Lyapunov exponents, Oseledets
//! directions and the projective skew product.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::base::{distance, BasePoint, BaseSystem, Offset, Phase};
use crate::matrix::{gl_to_sl, psl_normalize, Mat2, ProjPoint};

/// Products whose entries leave this range are rescaled.
const RENORM_HI: f64 = 1e30;
const RENORM_LO: f64 = 1e-30;
/// Unscaled products are abandoned past this norm.
pub const OVERFLOW_GUARD: f64 = 1e150;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CocycleError {
    #[error("product norm exceeded {OVERFLOW_GUARD:e}; use the scaled form")]
    Overflow(ScaledMat),
    #[error("degenerate Oseledets splitting: {0}")]
    Degenerate(String),
    #[error("{0}")]
    InvalidSpec(String),
}

/// One term `cos·cos(2πφ) + sin·sin(2πφ)` with `φ = kx·x + ky·y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FourierTerm {
    pub kx: i64,
    pub ky: i64,
    pub cos: f64,
    pub sin: f64,
}

/// A real trigonometric polynomial on the circle or torus.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Fourier {
    pub constant: f64,
    pub terms: Vec<FourierTerm>,
}

impl Fourier {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    /// `c + a·cos(2πkx) + b·sin(2πkx)`.
    pub fn circle(c: f64, k: i64, a: f64, b: f64) -> Self {
        Self { constant: c, terms: vec![FourierTerm { kx: k, ky: 0, cos: a, sin: b }] }
    }

    pub fn with_term(mut self, kx: i64, ky: i64, cos: f64, sin: f64) -> Self {
        self.terms.push(FourierTerm { kx, ky, cos, sin });
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }

    fn phase(t: &FourierTerm, p: (Phase, Phase)) -> Phase {
        Phase(p.0 .0.wrapping_mul(t.kx as u64).wrapping_add(p.1 .0.wrapping_mul(t.ky as u64)))
    }

    pub fn eval(&self, x: &BasePoint) -> f64 {
        let p = x.phases();
        self.terms.iter().fold(self.constant, |acc, t| {
            let phi = Self::phase(t, p).signed_diff(Phase(0));
            let (s, c) = (TAU * phi).sin_cos();
            acc + t.cos * c + t.sin * s
        })
    }

    /// `h(x) − h(y)` without cancellation for nearby points.
    pub fn diff(&self, x: &BasePoint, y: &BasePoint) -> f64 {
        self.diff_offset(x, &Offset::between(x, y))
    }

    /// `h(x) − h(x + δ)`, accurate relative to `|δ|`.
    pub fn diff_offset(&self, x: &BasePoint, delta: &Offset) -> f64 {
        let p = x.phases();
        let (dx, dy) = delta.phase_offsets(x);
        self.terms
            .iter()
            .map(|t| {
                let dphi = t.kx as f64 * dx + t.ky as f64 * dy;
                let mid = Self::phase(t, p).signed_diff(Phase(0)) + 0.5 * dphi;
                let sh = (PI * dphi).sin();
                let (sm, cm) = (TAU * mid).sin_cos();
                // cos a − cos b = −2 sin((a+b)/2) sin((a−b)/2), likewise for sin
                t.cos * (2.0 * sm * sh) - t.sin * (2.0 * cm * sh)
            })
            .sum()
    }

    /// `Σ 2π·|k|·(|cos| + |sin|)`, a Lipschitz bound for the flat metric.
    pub fn lipschitz_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| TAU * (t.kx as f64).hypot(t.ky as f64) * (t.cos.abs() + t.sin.abs()))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Descriptor of `x ↦ A(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    Constant { matrix: Mat2 },
    /// `R_{2π·h(x)}`
    Rotation { h: Fourier },
    /// `R_{2π(kx·x + ky·y)}` in the phase coordinates; winds `kx` and `ky`
    /// times around SO(2).
    Winding { kx: i64, ky: i64 },
    /// `diag(e^{g(x)}, e^{−g(x)})`
    Diagonal { g: Fourier },
    /// `[[1, h(x)], [0, 1]]`
    Shear { h: Fourier },
    /// `C(f(x))·L(x)·C(x)⁻¹`
    Coboundary { conj: Box<Generator>, inner: Box<Generator> },
    /// Pointwise product `G₀(x)·G₁(x)·…`.
    Pointwise { factors: Vec<Generator> },
    /// `e^{h(x)}·M(x)`, a GL-valued generator.
    Scaled { log_factor: Fourier, inner: Box<Generator> },
    /// A generator on one factor of a product system, ignoring the other.
    Lift { side: Side, inner: Box<Generator> },
    /// Over a shift skew product: `A_{x₀}(t)`, where generator `j` sees the
    /// fiber circle with rotation `fiber_rotations[j]`.
    RandomProduct { generators: Vec<Generator> },
    /// Canonical PSL representative of the inner value.
    Projectivized { inner: Box<Generator> },
    /// `A/sqrt(det A)`.
    SlPart { inner: Box<Generator> },
}

impl Generator {
    pub fn constant(m: Mat2) -> Self {
        Generator::Constant { matrix: m }
    }

    pub fn coboundary(conj: Generator, inner: Generator) -> Self {
        Generator::Coboundary { conj: Box::new(conj), inner: Box::new(inner) }
    }

    pub fn lift(side: Side, inner: Generator) -> Self {
        Generator::Lift { side, inner: Box::new(inner) }
    }

    pub fn scaled(log_factor: Fourier, inner: Generator) -> Self {
        Generator::Scaled { log_factor, inner: Box::new(inner) }
    }

    pub fn projectivized(inner: Generator) -> Self {
        Generator::Projectivized { inner: Box::new(inner) }
    }

    pub fn sl_part(inner: Generator) -> Self {
        Generator::SlPart { inner: Box::new(inner) }
    }

    /// True when `A(x)` does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        match self {
            Generator::Constant { .. } => true,
            Generator::Winding { kx, ky } => *kx == 0 && *ky == 0,
            Generator::Rotation { h } | Generator::Shear { h } => h.is_constant(),
            Generator::Diagonal { g } => g.is_constant(),
            Generator::Coboundary { conj, inner } => conj.is_constant() && inner.is_constant(),
            Generator::Pointwise { factors } => factors.iter().all(Generator::is_constant),
            Generator::Scaled { log_factor, inner } => log_factor.is_constant() && inner.is_constant(),
            Generator::Lift { inner, .. } | Generator::Projectivized { inner } | Generator::SlPart { inner } => {
                inner.is_constant()
            }
            Generator::RandomProduct { generators } => match generators.split_first() {
                Some((g, rest)) => {
                    g.is_constant() && rest.iter().all(|h| h.is_constant() && h == g)
                }
                None => true,
            },
        }
    }

    /// True when every value has unit determinant by construction.
    pub fn is_sl(&self) -> bool {
        match self {
            Generator::Constant { matrix } => (matrix.det() - 1.0).abs() <= 1e-12,
            Generator::Rotation { .. }
            | Generator::Winding { .. }
            | Generator::Diagonal { .. }
            | Generator::Shear { .. } => true,
            Generator::Coboundary { inner, .. } => inner.is_sl(),
            Generator::Pointwise { factors } => factors.iter().all(Generator::is_sl),
            Generator::Scaled { log_factor, inner } => {
                log_factor.is_constant() && log_factor.constant == 0.0 && inner.is_sl()
            }
            Generator::Lift { inner, .. } | Generator::Projectivized { inner } => inner.is_sl(),
            Generator::SlPart { .. } => true,
            Generator::RandomProduct { generators } => generators.iter().all(Generator::is_sl),
        }
    }

    /// Checks that the generator can be evaluated on points of `sys`.
    pub fn check_system(&self, sys: &BaseSystem) -> Result<(), CocycleError> {
        let sys = sys.dynamics();
        match self {
            Generator::Coboundary { conj, inner } => {
                conj.check_system(sys)?;
                inner.check_system(sys)
            }
            Generator::Pointwise { factors } => factors.iter().try_for_each(|g| g.check_system(sys)),
            Generator::Scaled { inner, .. } | Generator::Projectivized { inner } | Generator::SlPart { inner } => {
                inner.check_system(sys)
            }
            Generator::Lift { side, inner } => match sys {
                BaseSystem::Product { left, right } => inner.check_system(if *side == Side::Left { left } else { right }),
                _ => Err(CocycleError::InvalidSpec(format!("a lifted generator needs a product system, got {}", sys.name()))),
            },
            Generator::RandomProduct { generators } => match sys {
                BaseSystem::ShiftSkew { fiber_rotations, .. } if fiber_rotations.len() == generators.len() => generators
                    .iter()
                    .zip(fiber_rotations)
                    .try_for_each(|(g, w)| g.check_system(&BaseSystem::Rotation { omega: *w })),
                BaseSystem::ShiftSkew { fiber_rotations, .. } => Err(CocycleError::InvalidSpec(format!(
                    "{} generators for {} symbols",
                    generators.len(),
                    fiber_rotations.len()
                ))),
                _ => Err(CocycleError::InvalidSpec(format!("a random product needs a shift skew system, got {}", sys.name()))),
            },
            _ => Ok(()),
        }
    }

    /// `A(x)`.
    ///
    /// # Panics
    /// If `x` or `sys` does not have the shape the generator expects.
    pub fn eval(&self, sys: &BaseSystem, x: &BasePoint) -> Mat2 {
        let sys = sys.dynamics();
        match self {
            Generator::Constant { matrix } => *matrix,
            Generator::Rotation { h } => Mat2::rotation(TAU * h.eval(x)),
            Generator::Diagonal { g } => {
                let e = g.eval(x).exp();
                Mat2::diag(e, 1.0 / e)
            }
            Generator::Winding { kx, ky } => Mat2::rotation(TAU * winding_phase(*kx, *ky, x)),
            Generator::Shear { h } => Mat2::shear(h.eval(x)),
            Generator::Coboundary { conj, inner } => {
                let fx = sys.step(x, 1);
                conj.eval(sys, &fx) * inner.eval(sys, x) * conj.eval(sys, x).inverse()
            }
            Generator::Pointwise { factors } => {
                factors.iter().fold(Mat2::IDENTITY, |acc, g| acc * g.eval(sys, x))
            }
            Generator::Scaled { log_factor, inner } => inner.eval(sys, x).scale(log_factor.eval(x).exp()),
            Generator::Lift { side, inner } => {
                let (s, p) = factor(sys, x, *side);
                inner.eval(s, p)
            }
            Generator::RandomProduct { generators } => {
                let (j, fiber, t) = random_product_parts(sys, x);
                generators[j].eval(&fiber, t)
            }
            Generator::Projectivized { inner } => psl_normalize(&inner.eval(sys, x)).rep,
            Generator::SlPart { inner } => {
                let m = inner.eval(sys, x);
                gl_to_sl(&m).map(|(_, b)| b).unwrap_or(m)
            }
        }
    }

    /// `A(x) − A(y)`, computed without cancellation where the generator
    /// structure allows it.
    pub fn eval_diff(&self, sys: &BaseSystem, x: &BasePoint, y: &BasePoint) -> Mat2 {
        self.eval_diff_with(sys, x, y, &Offset::between(x, y))
    }

    /// As [`Generator::eval_diff`], with the displacement `δ = y − x`
    /// supplied at full relative precision.
    pub fn eval_diff_with(&self, sys: &BaseSystem, x: &BasePoint, y: &BasePoint, delta: &Offset) -> Mat2 {
        let sys = sys.dynamics();
        match self {
            Generator::Constant { .. } => Mat2::ZERO,
            Generator::Rotation { h } => rotation_diff(h.eval(x), h.diff_offset(x, delta)),
            Generator::Diagonal { g } => {
                let dg = g.diff_offset(x, delta);
                let gy = g.eval(x) - dg;
                Mat2::diag(gy.exp() * dg.exp_m1(), (-gy).exp() * (-dg).exp_m1())
            }
            Generator::Winding { kx, ky } => {
                let (dx, dy) = delta.phase_offsets(x);
                let dh = -(*kx as f64 * dx + *ky as f64 * dy);
                rotation_diff(winding_phase(*kx, *ky, x), dh)
            }
            Generator::Shear { h } => Mat2::new(0.0, h.diff_offset(x, delta), 0.0, 0.0),
            Generator::Coboundary { conj, inner } => {
                let (fx, fy) = (sys.step(x, 1), sys.step(y, 1));
                let fdelta = sys.push_offset(delta);
                let (cx, cy) = (conj.eval(sys, x), conj.eval(sys, y));
                let (cxi, cyi) = (cx.inverse(), cy.inverse());
                let dcf = conj.eval_diff_with(sys, &fx, &fy, &fdelta);
                let dl = inner.eval_diff_with(sys, x, y, delta);
                let dc = conj.eval_diff_with(sys, x, y, delta);
                let lx = inner.eval(sys, x);
                let ly = inner.eval(sys, y);
                let cfy = conj.eval(sys, &fy);
                dcf * lx * cxi + cfy * dl * cxi - cfy * ly * cxi * dc * cyi
            }
            Generator::Pointwise { factors } => {
                // Σᵢ G₀(x)…Gᵢ₋₁(x)·ΔGᵢ·Gᵢ₊₁(y)…
                let mut suffix = vec![Mat2::IDENTITY; factors.len() + 1];
                for i in (0..factors.len()).rev() {
                    suffix[i] = factors[i].eval(sys, y) * suffix[i + 1];
                }
                let mut prefix = Mat2::IDENTITY;
                let mut total = Mat2::ZERO;
                for (i, g) in factors.iter().enumerate() {
                    total = total + prefix * g.eval_diff_with(sys, x, y, delta) * suffix[i + 1];
                    prefix = prefix * g.eval(sys, x);
                }
                total
            }
            Generator::Scaled { log_factor, inner } => {
                let dh = log_factor.diff_offset(x, delta);
                let hy = log_factor.eval(x) - dh;
                (inner.eval(sys, x).scale(dh.exp_m1()) + inner.eval_diff_with(sys, x, y, delta)).scale(hy.exp())
            }
            Generator::Lift { side, inner } => {
                let (s, px) = factor(sys, x, *side);
                let (_, py) = factor(sys, y, *side);
                let d = match side {
                    Side::Left => delta.left(),
                    Side::Right => delta.right(),
                };
                inner.eval_diff_with(s, px, py, d)
            }
            Generator::RandomProduct { generators } => {
                let (j, fiber, t) = random_product_parts(sys, x);
                let (k, fiber_y, u) = random_product_parts(sys, y);
                if j == k {
                    generators[j].eval_diff_with(&fiber, t, u, delta.right())
                } else {
                    generators[j].eval(&fiber, t) - generators[k].eval(&fiber_y, u)
                }
            }
            Generator::Projectivized { .. } | Generator::SlPart { .. } => self.eval(sys, x) - self.eval(sys, y),
        }
    }
}

/// `R_{2π·hx} − R_{2π·(hx − dh)}`.
fn rotation_diff(hx: f64, dh: f64) -> Mat2 {
    let sh = (PI * dh).sin();
    let (sm, cm) = (PI * (2.0 * hx - dh)).sin_cos();
    let dc = -2.0 * sm * sh;
    let ds = 2.0 * cm * sh;
    Mat2::new(dc, -ds, ds, dc)
}

fn winding_phase(kx: i64, ky: i64, x: &BasePoint) -> f64 {
    let (px, py) = x.phases();
    Phase(px.0.wrapping_mul(kx as u64).wrapping_add(py.0.wrapping_mul(ky as u64))).signed_diff(Phase(0))
}

fn factor<'a>(sys: &'a BaseSystem, x: &'a BasePoint, side: Side) -> (&'a BaseSystem, &'a BasePoint) {
    match (sys.dynamics(), x) {
        (BaseSystem::Product { left, right }, BasePoint::Product(l, r)) => match side {
            Side::Left => (left, l),
            Side::Right => (right, r),
        },
        (s, p) => panic!("lifted generator needs a product system and point, got {} / {p:?}", s.name()),
    }
}

fn random_product_parts<'a>(sys: &BaseSystem, x: &'a BasePoint) -> (usize, BaseSystem, &'a BasePoint) {
    let (BaseSystem::ShiftSkew { fiber_rotations, .. }, BasePoint::Product(l, r)) = (sys.dynamics(), x) else {
        panic!("random-product generator needs a shift skew system");
    };
    let BasePoint::Shift(s) = l.as_ref() else {
        panic!("random-product point must be (shift, circle)");
    };
    let j = s.symbol(0) as usize;
    (j, BaseSystem::Rotation { omega: fiber_rotations[j] }, r.as_ref())
}

/// A cocycle: generator, Hölder exponent and optional declared Hölder
/// constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CocycleSpec {
    pub generator: Generator,
    pub alpha: f64,
    pub holder_constant: Option<f64>,
}

impl CocycleSpec {
    pub fn new(generator: Generator) -> Self {
        Self { generator, alpha: 1.0, holder_constant: None }
    }

    pub fn constant(m: Mat2) -> Self {
        Self::new(Generator::constant(m))
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_holder_constant(mut self, c: f64) -> Self {
        self.holder_constant = Some(c);
        self
    }

    pub fn validate(&self) -> Result<(), CocycleError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CocycleError::InvalidSpec(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if let Some(c) = self.holder_constant {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(CocycleError::InvalidSpec(format!("holder_constant must be finite and ≥ 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, sys: &BaseSystem, x: &BasePoint) -> Mat2 {
        self.generator.eval(sys, x)
    }

    pub fn check_system(&self, sys: &BaseSystem) -> Result<(), CocycleError> {
        self.generator.check_system(sys)
    }

    pub fn eval_diff(&self, sys: &BaseSystem, x: &BasePoint, y: &BasePoint) -> Mat2 {
        self.generator.eval_diff(sys, x, y)
    }

    pub fn eval_diff_with(&self, sys: &BaseSystem, x: &BasePoint, y: &BasePoint, delta: &Offset) -> Mat2 {
        self.generator.eval_diff_with(sys, x, y, delta)
    }

    /// The same cocycle through its canonical PSL representatives.
    pub fn projectivized(&self) -> Self {
        Self { generator: Generator::projectivized(self.generator.clone()), ..self.clone() }
    }

    /// The determinant-one part `A/sqrt(det A)`.
    pub fn sl_part(&self) -> Self {
        Self { generator: Generator::sl_part(self.generator.clone()), ..self.clone() }
    }
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A matrix in factored form `e^{log_scale}·mat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaledMat {
    pub mat: Mat2,
    pub log_scale: f64,
}

impl ScaledMat {
    pub fn log_norm(&self) -> f64 {
        self.log_scale + self.mat.operator_norm().ln()
    }

    /// The plain matrix, if it is representable.
    pub fn to_mat(&self) -> Option<Mat2> {
        let m = self.mat.scale(self.log_scale.exp());
        m.is_finite().then_some(m)
    }
}

/// Running product `A(x_{k−1})…A(x_0)` with renormalization and separate
/// log-determinant bookkeeping.
#[derive(Clone, Debug)]
struct Accumulator {
    mat: Mat2,
    log_scale: NeumaierSum,
    log_det: NeumaierSum,
}

impl Accumulator {
    fn new() -> Self {
        Self { mat: Mat2::IDENTITY, log_scale: NeumaierSum::default(), log_det: NeumaierSum::default() }
    }

    fn push(&mut self, a: &Mat2) {
        self.mat = *a * self.mat;
        self.log_det.add(a.det().abs().ln());
        let m = self.mat.max_abs();
        if !(RENORM_LO..=RENORM_HI).contains(&m) {
            self.mat = self.mat.scale(1.0 / m);
            self.log_scale.add(m.ln());
        }
    }

    fn log_norm(&self) -> f64 {
        self.log_scale.value() + self.mat.operator_norm().ln()
    }

    /// `log ‖(Aⁿ)⁻¹‖⁻¹ = log|det Aⁿ| − log‖Aⁿ‖` in dimension two.
    fn log_conorm(&self) -> f64 {
        self.log_det.value() - self.log_norm()
    }
}

/// Factors of `Aⁿ(x)` in multiplication order: `A(fᵏx)` for `n > 0`, and
/// `A(f^{−k}x)⁻¹` walking backwards for `n < 0`.
fn for_each_factor(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, n: i64, mut f: impl FnMut(Mat2) -> bool) {
    let mut z = x.clone();
    if n >= 0 {
        for _ in 0..n {
            if !f(spec.eval(sys, &z)) {
                return;
            }
            sys.advance(&mut z, 1);
        }
    } else {
        for _ in 0..-n {
            sys.advance(&mut z, -1);
            if !f(spec.eval(sys, &z).inverse()) {
                return;
            }
        }
    }
}

/// `Aⁿ(x)` in factored form, renormalized as needed.
pub fn cocycle_product_scaled(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, n: i64) -> ScaledMat {
    let mut acc = Accumulator::new();
    for_each_factor(spec, sys, x, n, |a| {
        acc.push(&a);
        true
    });
    ScaledMat { mat: acc.mat, log_scale: acc.log_scale.value() }
}

/// `Aⁿ(x)`: `A(f^{n−1}x)…A(x)` for `n > 0`, `Id` for `n = 0`, and
/// `(A^{−n}(fⁿx))⁻¹` for `n < 0`. The last case is evaluated as the product
/// of the inverted factors, which avoids inverting a badly conditioned
/// product.
///
/// Falls back to the factored form once a partial product passes
/// [`OVERFLOW_GUARD`].
pub fn cocycle_product(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, n: i64) -> Result<Mat2, CocycleError> {
    let mut m = Mat2::IDENTITY;
    let mut overflow = false;
    for_each_factor(spec, sys, x, n, |a| {
        m = a * m;
        overflow = m.max_abs() > OVERFLOW_GUARD || !m.is_finite();
        !overflow
    });
    if overflow {
        return Err(CocycleError::Overflow(cocycle_product_scaled(spec, sys, x, n)));
    }
    Ok(m)
}

/// Mean over seeded orbits with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    pub iterations: u64,
    pub orbits: u64,
    pub std_error: f64,
}

impl LyapunovEstimate {
    pub fn from_samples(samples: &[f64], iterations: u64) -> Self {
        let k = samples.len() as f64;
        let mut sum = NeumaierSum::default();
        samples.iter().for_each(|s| sum.add(*s));
        let mean = sum.value() / k;
        let std_error = if samples.len() > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        Self { value: mean, iterations, orbits: samples.len() as u64, std_error }
    }
}

/// Starting point of orbit `orbit` in a run seeded by `seed`.
pub fn orbit_start(sys: &BaseSystem, seed: u64, orbit: u64) -> BasePoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(orbit);
    sys.sample_with(&mut rng)
}

fn per_orbit<T: Send>(orbits: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..orbits).into_par_iter().map(f).collect()
}

/// Top and bottom exponents from the same orbits.
pub fn lyapunov_pair(
    spec: &CocycleSpec,
    sys: &BaseSystem,
    n: u64,
    orbits: u64,
    seed: u64,
) -> (LyapunovEstimate, LyapunovEstimate) {
    assert!(n >= 1 && orbits >= 1, "n and orbits must be positive");
    let runs = per_orbit(orbits, |o| {
        let mut x = orbit_start(sys, seed, o);
        let mut acc = Accumulator::new();
        for _ in 0..n {
            acc.push(&spec.eval(sys, &x));
            sys.advance(&mut x, 1);
        }
        (acc.log_norm() / n as f64, acc.log_conorm() / n as f64)
    });
    let top: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let bottom: Vec<f64> = runs.iter().map(|r| r.1).collect();
    (LyapunovEstimate::from_samples(&top, n), LyapunovEstimate::from_samples(&bottom, n))
}

/// `λᵘ = lim (1/n) log ‖Aⁿ(x)‖`, averaged over `orbits` seeded orbits.
pub fn lyapunov_top(spec: &CocycleSpec, sys: &BaseSystem, n: u64, orbits: u64, seed: u64) -> LyapunovEstimate {
    lyapunov_pair(spec, sys, n, orbits, seed).0
}

/// `λˢ = lim (1/n) log ‖Aⁿ(x)⁻¹‖⁻¹`, averaged over `orbits` seeded orbits.
pub fn lyapunov_bottom(spec: &CocycleSpec, sys: &BaseSystem, n: u64, orbits: u64, seed: u64) -> LyapunovEstimate {
    lyapunov_pair(spec, sys, n, orbits, seed).1
}

/// Birkhoff average of `phi` along the same orbits that
/// [`lyapunov_pair`] uses for equal `seed`.
pub fn birkhoff_average(
    sys: &BaseSystem,
    n: u64,
    orbits: u64,
    seed: u64,
    phi: impl Fn(&BasePoint) -> f64 + Sync + Send,
) -> LyapunovEstimate {
    let runs = per_orbit(orbits, |o| {
        let mut x = orbit_start(sys, seed, o);
        let mut sum = NeumaierSum::default();
        for _ in 0..n {
            sum.add(phi(&x));
            sys.advance(&mut x, 1);
        }
        sum.value() / n as f64
    });
    LyapunovEstimate::from_samples(&runs, n)
}

/// Parameters of [`oseledets_directions`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OseledetsConfig {
    pub depth: u64,
    /// Minimal `P¹` separation between `Eu` and `Es`, and maximal spread
    /// between runs from different seed directions.
    pub degeneracy_tol: f64,
    /// Seed direction in radians.
    pub seed_angle: f64,
}

impl Default for OseledetsConfig {
    fn default() -> Self {
        Self { depth: 200, degeneracy_tol: 1e-6, seed_angle: 1.0 }
    }
}

fn push_direction(v: [f64; 2], m: &Mat2) -> [f64; 2] {
    let w = m.apply(v);
    let r = w[0].hypot(w[1]);
    [w[0] / r, w[1] / r]
}

fn oseledets_from(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, depth: u64, angle: f64) -> (ProjPoint, ProjPoint) {
    let seed = ProjPoint::new(angle).vector();
    let mut z = sys.step(x, -(depth as i64));
    let mut v = seed;
    for _ in 0..depth {
        v = push_direction(v, &spec.eval(sys, &z));
        sys.advance(&mut z, 1);
    }
    let eu = ProjPoint::from_vector(v);
    let mut w = sys.step(x, depth as i64);
    let mut v = seed;
    for _ in 0..depth {
        sys.advance(&mut w, -1);
        v = push_direction(v, &spec.eval(sys, &w).inverse());
    }
    (eu, ProjPoint::from_vector(v))
}

/// Estimates `(Eu(x), Es(x))`: `Eu` pushed forward from `f^{−n}x`, `Es`
/// pulled back from `fⁿx`.
///
/// The run is repeated from a second, orthogonal seed direction; the
/// splitting is reported degenerate when the runs disagree or when `Eu`
/// and `Es` nearly coincide.
pub fn oseledets_directions(
    spec: &CocycleSpec,
    sys: &BaseSystem,
    x: &BasePoint,
    cfg: &OseledetsConfig,
) -> Result<(ProjPoint, ProjPoint), CocycleError> {
    let (eu, es) = oseledets_from(spec, sys, x, cfg.depth, cfg.seed_angle);
    let (eu2, es2) = oseledets_from(spec, sys, x, cfg.depth, cfg.seed_angle + PI / 2.0);
    let spread = eu.dist(&eu2).max(es.dist(&es2));
    if spread > cfg.degeneracy_tol {
        return Err(CocycleError::Degenerate(format!(
            "directions depend on the seed (spread {spread:.3e}); no dominated splitting"
        )));
    }
    let gap = eu.dist(&es);
    if gap < cfg.degeneracy_tol {
        return Err(CocycleError::Degenerate(format!("Eu and Es are {gap:.3e} apart")));
    }
    Ok((eu, es))
}

/// `F_Aⁿ(x, v) = (fⁿx, [Aⁿ(x)v])` for `n ≥ 0`.
pub fn skew_step(spec: &CocycleSpec, sys: &BaseSystem, point: (&BasePoint, ProjPoint), n: u64) -> (BasePoint, ProjPoint) {
    let (x, v) = point;
    let mut z = x.clone();
    let mut w = v.vector();
    for _ in 0..n {
        w = push_direction(w, &spec.eval(sys, &z));
        sys.advance(&mut z, 1);
    }
    (z, if n == 0 { v } else { ProjPoint::from_vector(w) })
}

/// `Φ_A(x, v) = log(‖A(x)v‖/‖v‖)`.
pub fn phi(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, v: &ProjPoint) -> f64 {
    let w = spec.eval(sys, x).apply(v.vector());
    w[0].hypot(w[1]).ln()
}

/// Monte Carlo average of `Φ_A` over `samples` draws `(x, v)` from `m`.
pub fn phi_integral(
    spec: &CocycleSpec,
    sys: &BaseSystem,
    mut m: impl FnMut(usize) -> (BasePoint, ProjPoint),
    samples: usize,
) -> f64 {
    let mut sum = NeumaierSum::default();
    for i in 0..samples {
        let (x, v) = m(i);
        sum.add(phi(spec, sys, &x, &v));
    }
    sum.value() / samples as f64
}

/// `size` points of the invariant measure, reproducible in `seed`.
pub fn sample_grid(sys: &BaseSystem, size: usize, seed: u64) -> Vec<BasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| sys.sample_with(&mut rng)).collect()
}

/// A nearby point at distance about `eps`, moving every phase coordinate.
pub fn perturb(x: &BasePoint, eps: f64, direction: f64) -> BasePoint {
    match x {
        BasePoint::Circle(t) => BasePoint::Circle(t.offset(eps * direction.cos().signum())),
        BasePoint::Torus(a, b) => {
            let (s, c) = direction.sin_cos();
            BasePoint::Torus(a.offset(eps * c), b.offset(eps * s))
        }
        BasePoint::Shift(_) => x.clone(),
        BasePoint::Product(l, r) => {
            let (s, c) = direction.sin_cos();
            BasePoint::product(perturb(l, eps * c.abs(), 2.0 * direction), perturb(r, eps * s.abs(), 3.0 * direction))
        }
    }
}

/// Sampled supremum of `‖A(x) − A(y)‖ / d(x, y)^α` over grid points and
/// nearby partners at several scales.
pub fn sampled_holder_ratio(spec: &CocycleSpec, sys: &BaseSystem, grid: &[BasePoint]) -> f64 {
    let scales = [1e-1, 1e-3, 1e-6];
    grid.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut best = 0.0f64;
            for (k, eps) in scales.iter().enumerate() {
                let y = perturb(x, *eps, 0.7 + 1.3 * i as f64 + 2.1 * k as f64);
                let d = distance(x, &y);
                if d > 0.0 {
                    let r = spec.eval_diff(sys, x, &y).operator_norm() / d.powf(spec.alpha);
                    best = best.max(r);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}
