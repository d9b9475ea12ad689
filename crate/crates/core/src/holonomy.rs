//! Fiber bunching, stable and unstable holonomies with certified truncation
//! bounds, holonomies along su-paths, and trivialization by holonomies.
//!
//! Holonomies are summed in telescoped form. With `Pₖ = Bᵏ(x)` and
//! `Qₖ = Bᵏ(y)⁻¹`,
//!
//! ```text
//! Hₙ = Qₙ·Pₙ = Id + Σ_{k<n} Q_{k+1}·(B(xₖ) − B(yₖ))·Pₖ
//! ```
//!
//! and the differences `B(xₖ) − B(yₖ)` come from the generator's analytic
//! difference, so nothing cancels even when `xₖ` and `yₖ` agree to many
//! digits. `B = A` over `f` for stable holonomies and `B = A⁻¹∘f⁻¹` over
//! `f⁻¹` for unstable ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::base::{leaf_distance, leaf_offset, su_connect, BaseError, BasePoint, BaseSystem, LeafKind, SuPath};
use crate::cocycle::{cocycle_product, sample_grid, sampled_holder_ratio, CocycleSpec};
use crate::matrix::Mat2;

pub const DEFAULT_GRID: usize = 10_000;
pub const DEFAULT_SAFETY: f64 = 2.0;
pub const DEFAULT_MAX_ITERATIONS: u64 = 10_000;
const GRID_SEED: u64 = 0x6772_6964;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HolonomyError {
    #[error("the endpoint is not on the {0} leaf of the start point")]
    NotOnLeaf(LeafKind),
    #[error("cocycle is not fiber-bunched (rho = {rho:.6})")]
    NotFiberBunched { rho: f64 },
    #[error("no convergence after {iterations} iterations (tail bound {bound:e})")]
    NoConvergence { iterations: u64, bound: f64 },
    #[error("loop holonomy differs from the identity by {residual:e}")]
    LoopObstruction { residual: f64, path: Box<SuPath> },
    #[error("no su-path: {0}")]
    PathUnreachable(BaseError),
    #[error(transparent)]
    Base(#[from] BaseError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Grid suprema behind the fiber-bunching inequality
/// `‖A(x)‖‖A(x)⁻¹‖ν(x)^α < 1` and its `ν̂` analogue.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberBunchingReport {
    pub alpha: f64,
    pub grid_size: usize,
    pub nu: f64,
    pub nu_hat: f64,
    /// `sup ‖A‖`
    pub sup_norm: f64,
    /// `sup ‖A⁻¹‖`
    pub sup_inverse_norm: f64,
    /// `sup ‖A‖‖A⁻¹‖`
    pub sup_condition: f64,
    pub rho_s: f64,
    pub rho_u: f64,
    /// `1 − max(rho_s, rho_u)`
    pub margin: f64,
    pub pass: bool,
}

/// Evaluates fiber bunching on `grid_size` points of the invariant measure.
pub fn fiber_bunching(spec: &CocycleSpec, sys: &BaseSystem, grid_size: usize) -> Result<FiberBunchingReport, HolonomyError> {
    let rates = sys.rates();
    let (Some(nu), Some(nu_hat)) = (rates.nu, rates.nu_hat) else {
        return Err(BaseError::TrivialSplitting("fiber bunching needs stable and unstable rates".into()).into());
    };
    let grid_size = if spec.generator.is_constant() { 1 } else { grid_size.max(1) };
    let grid = sample_grid(sys, grid_size, GRID_SEED);
    let (m, k, cond) = grid
        .par_iter()
        .map(|x| {
            let a = spec.eval(sys, x);
            let (hi, lo) = a.singular_values();
            (hi, 1.0 / lo, hi / lo)
        })
        .reduce(|| (0.0, 0.0, 0.0), |p, q| (p.0.max(q.0), p.1.max(q.1), p.2.max(q.2)));
    let rho_s = cond * nu.powf(spec.alpha);
    let rho_u = cond * nu_hat.powf(spec.alpha);
    let worst = rho_s.max(rho_u);
    Ok(FiberBunchingReport {
        alpha: spec.alpha,
        grid_size,
        nu,
        nu_hat,
        sup_norm: m,
        sup_inverse_norm: k,
        sup_condition: cond,
        rho_s,
        rho_u,
        margin: 1.0 - worst,
        pass: worst < 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HolonomyConfig {
    pub tol: f64,
    pub grid_size: usize,
    /// Multiplier applied to the sampled Hölder constant.
    pub safety: f64,
    pub max_iterations: u64,
}

impl Default for HolonomyConfig {
    fn default() -> Self {
        Self { tol: 1e-10, grid_size: DEFAULT_GRID, safety: DEFAULT_SAFETY, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

impl HolonomyConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Holonomy {
    pub matrix: Mat2,
    pub truncation_n: u64,
    pub error_bound: f64,
    pub kind: LeafKind,
    pub endpoints: (BasePoint, BasePoint),
}

/// Holonomy along a whole su-path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathHolonomy {
    pub matrix: Mat2,
    pub error_bound: f64,
    pub legs: usize,
    pub max_truncation_n: u64,
}

/// Constants of the truncation bound for one direction.
#[derive(Clone, Copy, Debug)]
struct TailConstants {
    nu: f64,
    /// `sup ‖B⁻¹‖`
    k_b: f64,
    /// Hölder constant of `B`
    c_b: f64,
    /// `sup ‖B‖ ·` Hölder constant of `B⁻¹`
    drift: f64,
}

/// Precomputed bunching data and Hölder constant for one cocycle.
#[derive(Clone, Debug)]
pub struct HolonomyEngine {
    spec: CocycleSpec,
    sys: BaseSystem,
    cfg: HolonomyConfig,
    report: FiberBunchingReport,
    holder_constant: f64,
    sl: bool,
}

impl HolonomyEngine {
    pub fn new(spec: &CocycleSpec, sys: &BaseSystem, cfg: HolonomyConfig) -> Result<Self, HolonomyError> {
        spec.validate().map_err(|e| HolonomyError::InvalidParameter(e.to_string()))?;
        if !(cfg.tol > 0.0) {
            return Err(HolonomyError::InvalidParameter(format!("tol must be positive, got {}", cfg.tol)));
        }
        let report = fiber_bunching(spec, sys, cfg.grid_size)?;
        if !report.pass {
            return Err(HolonomyError::NotFiberBunched { rho: report.rho_s.max(report.rho_u) });
        }
        let holder_constant = match spec.holder_constant {
            Some(c) => c,
            None if spec.generator.is_constant() => 0.0,
            None => {
                let grid = sample_grid(sys, cfg.grid_size.max(1), GRID_SEED ^ 1);
                cfg.safety * sampled_holder_ratio(spec, sys, &grid)
            }
        };
        Ok(Self { spec: spec.clone(), sys: sys.clone(), cfg, report, holder_constant, sl: spec.generator.is_sl() })
    }

    pub fn report(&self) -> &FiberBunchingReport {
        &self.report
    }

    /// The Hölder constant used in truncation bounds.
    pub fn holder_constant(&self) -> f64 {
        self.holder_constant
    }

    pub fn config(&self) -> &HolonomyConfig {
        &self.cfg
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.cfg.tol = tol;
        self
    }

    fn tail_constants(&self, kind: LeafKind) -> TailConstants {
        let r = &self.report;
        let c = self.holder_constant;
        let (m, k) = (r.sup_norm, r.sup_inverse_norm);
        let nu = self.sys.leaf_contraction(kind).unwrap_or(match kind {
            LeafKind::S => r.nu,
            LeafKind::U => r.nu_hat,
        });
        match kind {
            // B = A: ‖ΔB⁻¹‖ ≤ K²·C d^α
            LeafKind::S => TailConstants { nu, k_b: k, c_b: c, drift: m * k * k * c },
            // B = A⁻¹∘f⁻¹: ‖ΔB‖ ≤ K²·C d^α, ‖ΔB⁻¹‖ ≤ C d^α
            LeafKind::U => TailConstants { nu, k_b: m, c_b: k * k * c, drift: k * c },
        }
    }

    /// Per-step growth bound `ρₙ = (sup‖B‖‖B⁻¹‖ + drift·dₙ^α)·ν^α` at leaf
    /// distance `d`.
    fn rho_at(&self, t: &TailConstants, d: f64) -> f64 {
        let a = self.spec.alpha;
        (self.report.sup_condition + t.drift * d.powf(a)) * t.nu.powf(a)
    }

    /// Bound on `‖H_{xy} − Id‖` for points at leaf distance `d`: the tail
    /// bound at `n = 0`, or `None` when `ρ ≥ 1` at that distance.
    pub fn increment_bound(&self, kind: LeafKind, d: f64) -> Option<f64> {
        let t = self.tail_constants(kind);
        let rho = self.rho_at(&t, d);
        (rho < 1.0).then(|| t.k_b * t.c_b * d.powf(self.spec.alpha) / (1.0 - rho))
    }

    /// `H^s_{xy}` for `y` on the stable leaf of `x`.
    pub fn stable(&self, x: &BasePoint, y: &BasePoint) -> Result<Holonomy, HolonomyError> {
        self.holonomy(x, y, LeafKind::S)
    }

    /// `H^u_{xz}` for `z` on the unstable leaf of `x`.
    pub fn unstable(&self, x: &BasePoint, z: &BasePoint) -> Result<Holonomy, HolonomyError> {
        self.holonomy(x, z, LeafKind::U)
    }

    pub fn holonomy(&self, x: &BasePoint, y: &BasePoint, kind: LeafKind) -> Result<Holonomy, HolonomyError> {
        if !self.sys.has_leaf(kind) {
            return Err(BaseError::LeafAbsent(kind).into());
        }
        let signed = leaf_distance(&self.sys, x, y, kind).ok_or(HolonomyError::NotOnLeaf(kind))?;
        let ell = signed.abs();
        let endpoints = (x.clone(), y.clone());
        if ell == 0.0 {
            return Ok(Holonomy { matrix: Mat2::IDENTITY, truncation_n: 0, error_bound: 0.0, kind, endpoints });
        }
        let t = self.tail_constants(kind);
        let alpha = self.spec.alpha;
        let (spec, sys) = (&self.spec, &self.sys);
        let mut p = Mat2::IDENTITY;
        let mut q = Mat2::IDENTITY;
        let mut sum = Mat2::ZERO;
        let mut abs_sum = 0.0;
        let mut xk = x.clone();
        let mut n = 0u64;
        loop {
            let d = ell * t.nu.powi(n as i32);
            let rho = self.rho_at(&t, d);
            let rounding = if n == 0 { 0.0 } else { 8.0 * f64::EPSILON * abs_sum + 4.0 * f64::EPSILON * (1.0 + sum.operator_norm()) };
            if t.c_b == 0.0 {
                return Ok(self.finish(Mat2::IDENTITY + sum, n, rounding, kind, endpoints));
            }
            if rho < 1.0 {
                let tail = q.operator_norm() * p.operator_norm() * t.k_b * t.c_b * d.powf(alpha) / (1.0 - rho);
                if tail + rounding < self.cfg.tol {
                    return Ok(self.finish(Mat2::IDENTITY + sum, n, tail + rounding, kind, endpoints));
                }
                if n >= self.cfg.max_iterations {
                    return Err(HolonomyError::NoConvergence { iterations: n, bound: tail });
                }
            } else if n >= self.cfg.max_iterations {
                return Err(HolonomyError::NoConvergence { iterations: n, bound: f64::INFINITY });
            }
            let (bx, by_inv, db) = match kind {
                LeafKind::S => {
                    let delta = leaf_offset(sys, kind, signed * t.nu.powi(n as i32))?;
                    let yk = delta.apply(&xk);
                    let bx = spec.eval(sys, &xk);
                    let by_inv = spec.eval(sys, &yk).inverse();
                    let db = spec.eval_diff_with(sys, &xk, &yk, &delta);
                    sys.advance(&mut xk, 1);
                    (bx, by_inv, db)
                }
                LeafKind::U => {
                    sys.advance(&mut xk, -1);
                    let delta = leaf_offset(sys, kind, signed * t.nu.powi(n as i32 + 1))?;
                    let yk = delta.apply(&xk);
                    let ax_inv = spec.eval(sys, &xk).inverse();
                    let ay = spec.eval(sys, &yk);
                    // A(x')⁻¹ − A(y')⁻¹ = −A(x')⁻¹·(A(x') − A(y'))·A(y')⁻¹
                    let db = -(ax_inv * spec.eval_diff_with(sys, &xk, &yk, &delta) * ay.inverse());
                    (ax_inv, ay, db)
                }
            };
            q = q * by_inv;
            let term = q * db * p;
            abs_sum += term.operator_norm();
            sum = sum + term;
            p = bx * p;
            n += 1;
        }
    }

    fn finish(&self, mut h: Mat2, n: u64, mut bound: f64, kind: LeafKind, endpoints: (BasePoint, BasePoint)) -> Holonomy {
        if self.sl {
            let det = h.det();
            if det > 0.0 && (det - 1.0).abs() < 1e-6 {
                bound += (det - 1.0).abs() * h.operator_norm();
                h = h.scale(1.0 / det.sqrt());
            }
        }
        Holonomy { matrix: h, truncation_n: n, error_bound: bound, kind, endpoints }
    }

    /// `H_{z_{n−1}z_n}∘…∘H_{z_0z_1}` along `path`, each leg computed to
    /// `tol / legs`.
    pub fn path(&self, path: &SuPath) -> Result<PathHolonomy, HolonomyError> {
        let legs = path.legs.len();
        if legs == 0 {
            return Ok(PathHolonomy { matrix: Mat2::IDENTITY, error_bound: 0.0, legs: 0, max_truncation_n: 0 });
        }
        let leg_engine = self.clone().with_tol(self.cfg.tol / legs as f64);
        let pieces: Vec<Holonomy> = path
            .legs
            .par_iter()
            .map(|leg| leg_engine.holonomy(&leg.start, &leg.end, leg.kind))
            .collect::<Result<_, _>>()?;
        let mut h = Mat2::IDENTITY;
        let mut e = 0.0;
        let mut max_n = 0;
        for piece in pieces {
            let hn = piece.matrix;
            let en = piece.error_bound;
            e = hn.operator_norm() * e + en * h.operator_norm() + e * en;
            h = hn * h;
            max_n = max_n.max(piece.truncation_n);
        }
        Ok(PathHolonomy { matrix: h, error_bound: e, legs, max_truncation_n: max_n })
    }

    /// `‖H_{fʲx fʲy} − Aʲ(y)·H_{xy}·Aʲ(x)⁻¹‖` for `y` on the stable leaf of `x`.
    pub fn equivariance_residual(&self, x: &BasePoint, y: &BasePoint, j: i64) -> Result<f64, HolonomyError> {
        if j == 0 {
            leaf_distance(&self.sys, x, y, LeafKind::S).ok_or(HolonomyError::NotOnLeaf(LeafKind::S))?;
            return Ok(0.0);
        }
        let h = self.stable(x, y)?;
        let (fx, fy) = (self.sys.step(x, j), self.sys.step(y, j));
        let hf = self.stable(&fx, &fy)?;
        let ajx = cocycle_product(&self.spec, &self.sys, x, j).map_err(|e| HolonomyError::InvalidParameter(e.to_string()))?;
        let ajy = cocycle_product(&self.spec, &self.sys, y, j).map_err(|e| HolonomyError::InvalidParameter(e.to_string()))?;
        Ok(hf.matrix.dist(&(ajy * h.matrix * ajx.inverse())))
    }
}

/// `H^s_{xy}` to tolerance `tol` with default grid settings.
pub fn stable_holonomy(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, y: &BasePoint, tol: f64) -> Result<Holonomy, HolonomyError> {
    HolonomyEngine::new(spec, sys, HolonomyConfig::with_tol(tol))?.stable(x, y)
}

/// `H^u_{xz}` to tolerance `tol` with default grid settings.
pub fn unstable_holonomy(spec: &CocycleSpec, sys: &BaseSystem, x: &BasePoint, z: &BasePoint, tol: f64) -> Result<Holonomy, HolonomyError> {
    HolonomyEngine::new(spec, sys, HolonomyConfig::with_tol(tol))?.unstable(x, z)
}

/// Holonomy along an su-path to tolerance `tol`.
pub fn path_holonomy(spec: &CocycleSpec, sys: &BaseSystem, path: &SuPath, tol: f64) -> Result<PathHolonomy, HolonomyError> {
    HolonomyEngine::new(spec, sys, HolonomyConfig::with_tol(tol))?.path(path)
}

/// Equivariance residual with default grid settings.
pub fn equivariance_residual(
    spec: &CocycleSpec,
    sys: &BaseSystem,
    x: &BasePoint,
    y: &BasePoint,
    j: i64,
    tol: f64,
) -> Result<f64, HolonomyError> {
    HolonomyEngine::new(spec, sys, HolonomyConfig::with_tol(tol))?.equivariance_residual(x, y, j)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrivializeConfig {
    /// Number of sampled loops `x → z₁ → z₂ → x`.
    pub loops: usize,
    /// Number of sample points `y` in the conjugacy table.
    pub samples: usize,
    /// Maximal leg length handed to `su_connect`.
    pub leg_length: f64,
    /// Residual above which a loop counts as an obstruction.
    pub loop_tol: f64,
    /// Accept loop holonomies equal to `−Id` (PSL cocycles).
    pub projective: bool,
    pub seed: u64,
}

impl Default for TrivializeConfig {
    fn default() -> Self {
        Self { loops: 200, samples: 500, leg_length: 1.0, loop_tol: 1e-6, projective: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugacyEntry {
    pub point: BasePoint,
    /// `H_{xy}`
    pub holonomy: Mat2,
    /// `Â(y) = H_{f(y)x}·A(y)·H_{xy}`
    pub value: Mat2,
    pub error_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trivialization {
    pub basepoint: BasePoint,
    /// `Â(x)`, the constant the cocycle is conjugated to.
    pub constant: Mat2,
    pub table: Vec<ConjugacyEntry>,
    pub loops_checked: usize,
    pub max_loop_residual: f64,
    /// `max_y ‖Â(y) − Â(x)‖`
    pub max_deviation: f64,
    /// Largest propagated holonomy error among the table entries.
    pub combined_tolerance: f64,
    /// `max ‖H_{xy}‖` over the table, loops excluded.
    pub holonomy_norm_bound: f64,
}

/// Random point in the su-class of `x`: only the coordinates moved by
/// stable and unstable leaves are resampled.
fn su_class_sample(sys: &BaseSystem, x: &BasePoint, rng: &mut ChaCha8Rng) -> BasePoint {
    match (sys.dynamics(), x) {
        (BaseSystem::CatMap { .. }, BasePoint::Torus(..)) => sys.sample_with(rng),
        (BaseSystem::Product { left, right }, BasePoint::Product(l, r)) => {
            let both = |s: &BaseSystem| s.has_leaf(LeafKind::S) && s.has_leaf(LeafKind::U);
            if both(right) {
                BasePoint::Product(l.clone(), Box::new(su_class_sample(right, r, rng)))
            } else if both(left) {
                BasePoint::Product(Box::new(su_class_sample(left, l, rng)), r.clone())
            } else {
                x.clone()
            }
        }
        _ => {
            let _ = rng.gen::<u64>();
            x.clone()
        }
    }
}

fn loop_residual(h: &Mat2, projective: bool) -> f64 {
    let plus = h.dist(&Mat2::IDENTITY);
    if projective {
        plus.min(h.dist(&-Mat2::IDENTITY))
    } else {
        plus
    }
}

/// Conjugates the cocycle to the constant `Â(x)` using holonomies along
/// su-paths from `x`, after checking that sampled loop holonomies at `x`
/// are trivial.
pub fn trivialize(engine: &HolonomyEngine, x: &BasePoint, cfg: &TrivializeConfig) -> Result<Trivialization, HolonomyError> {
    let sys = &engine.sys;
    let spec = &engine.spec;
    let connect = |a: &BasePoint, b: &BasePoint| su_connect(sys, a, b, cfg.leg_length).map_err(HolonomyError::PathUnreachable);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let loops: Vec<SuPath> = (0..cfg.loops)
        .map(|_| {
            let z1 = su_class_sample(sys, x, &mut rng);
            let z2 = su_class_sample(sys, x, &mut rng);
            Ok(connect(x, &z1)?.concat(connect(&z1, &z2)?).concat(connect(&z2, x)?))
        })
        .collect::<Result<_, HolonomyError>>()?;
    let mut max_loop_residual: f64 = 0.0;
    for path in &loops {
        let h = engine.path(path)?;
        let residual = loop_residual(&h.matrix, cfg.projective);
        if residual > cfg.loop_tol + h.error_bound {
            return Err(HolonomyError::LoopObstruction { residual, path: Box::new(path.clone()) });
        }
        max_loop_residual = max_loop_residual.max(residual);
    }

    let points: Vec<BasePoint> = (0..cfg.samples).map(|_| su_class_sample(sys, x, &mut rng)).collect();
    let entry = |y: &BasePoint| -> Result<ConjugacyEntry, HolonomyError> {
        let fy = sys.step(y, 1);
        let h_xy = engine.path(&connect(x, y)?)?;
        let h_fyx = engine.path(&connect(&fy, x)?)?;
        let a = spec.eval(sys, y);
        let value = h_fyx.matrix * a * h_xy.matrix;
        let na = a.operator_norm();
        let error_bound = h_fyx.error_bound * na * h_xy.matrix.operator_norm()
            + h_fyx.matrix.operator_norm() * na * h_xy.error_bound
            + h_fyx.error_bound * na * h_xy.error_bound;
        Ok(ConjugacyEntry { point: y.clone(), holonomy: h_xy.matrix, value, error_bound })
    };
    let base = entry(x)?;
    let table: Vec<ConjugacyEntry> = points.par_iter().map(entry).collect::<Result<_, _>>()?;
    let max_deviation = table.iter().map(|e| e.value.dist(&base.value)).fold(0.0, f64::max);
    let combined_tolerance = table.iter().map(|e| e.error_bound + base.error_bound).fold(0.0, f64::max);
    let holonomy_norm_bound = table
        .iter()
        .map(|e| e.holonomy.operator_norm().max(e.holonomy.inverse().operator_norm()))
        .fold(1.0, f64::max);
    Ok(Trivialization {
        basepoint: x.clone(),
        constant: base.value,
        table,
        loops_checked: loops.len(),
        max_loop_residual,
        max_deviation,
        combined_tolerance,
        holonomy_norm_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{cat_lambda, leaf_point, sample_measure, PhRates};
    use crate::cocycle::{oseledets_directions, Fourier, Generator, OseledetsConfig, Side};
    use crate::matrix::projective_action;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cat() -> BaseSystem {
        BaseSystem::cat_map()
    }

    fn conj() -> Generator {
        Generator::Pointwise {
            factors: vec![
                Generator::Shear { h: Fourier::constant(0.0).with_term(1, 0, 0.05, 0.02) },
                Generator::Rotation { h: Fourier::constant(0.0).with_term(0, 1, 0.0, 0.03) },
            ],
        }
    }

    fn coboundary(l: Mat2) -> CocycleSpec {
        CocycleSpec::new(Generator::coboundary(conj(), Generator::constant(l)))
    }

    fn engine(spec: &CocycleSpec, tol: f64) -> HolonomyEngine {
        HolonomyEngine::new(spec, &cat(), HolonomyConfig { grid_size: 2000, ..HolonomyConfig::with_tol(tol) }).unwrap()
    }

    fn pair(seed: u64, kind: LeafKind, d: f64) -> (BasePoint, BasePoint) {
        let x = sample_measure(&cat(), seed);
        let y = leaf_point(&cat(), &x, kind, d).unwrap();
        (x, y)
    }

    #[test]
    fn fiber_bunching_examples() {
        let prod = BaseSystem::product(BaseSystem::golden_rotation(), cat());
        let r = fiber_bunching(&CocycleSpec::constant(Mat2::IDENTITY), &prod, 100).unwrap();
        assert_abs_diff_eq!(r.rho_s, 1.0 / cat_lambda(), epsilon = 1e-12);
        assert!(r.pass);

        let d = CocycleSpec::constant(Mat2::diag(2.0, 0.5));
        let r = fiber_bunching(&d, &cat(), 100).unwrap();
        assert_abs_diff_eq!(r.rho_s, 4.0 / cat_lambda(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.rho_s, 1.527864, epsilon = 1e-6);
        assert!(!r.pass);

        let synthetic = BaseSystem::with_rates(cat(), PhRates { nu: Some(0.1), nu_hat: Some(0.1), ..Default::default() });
        let r = fiber_bunching(&d, &synthetic, 100).unwrap();
        assert_abs_diff_eq!(r.rho_s, 0.4, epsilon = 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn not_fiber_bunched_is_rejected() {
        let d = CocycleSpec::constant(Mat2::diag(2.0, 0.5));
        let (x, y) = pair(1, LeafKind::S, 0.1);
        assert!(matches!(stable_holonomy(&d, &cat(), &x, &y, 1e-8), Err(HolonomyError::NotFiberBunched { .. })));
    }

    #[test]
    fn constant_and_trivial_cases() {
        let l = CocycleSpec::constant(Mat2::new(1.2, 0.3, 0.1, 0.9).scale(1.0 / (1.08f64 - 0.03).sqrt()));
        let (x, y) = pair(2, LeafKind::S, 0.3);
        let h = stable_holonomy(&l, &cat(), &x, &y, 1e-10).unwrap();
        assert_eq!(h.matrix, Mat2::IDENTITY);
        assert_eq!(h.error_bound, 0.0);
        let (x, z) = pair(2, LeafKind::U, 0.3);
        assert_eq!(unstable_holonomy(&l, &cat(), &x, &z, 1e-10).unwrap().matrix, Mat2::IDENTITY);

        let e = engine(&coboundary(Mat2::diag(1.2, 1.0 / 1.2)), 1e-10);
        assert_eq!(e.stable(&x, &x).unwrap().matrix, Mat2::IDENTITY);
        assert_eq!(e.unstable(&x, &x).unwrap().matrix, Mat2::IDENTITY);
    }

    #[test]
    fn not_on_leaf() {
        let e = engine(&coboundary(Mat2::IDENTITY), 1e-8);
        let (x, y) = pair(3, LeafKind::U, 0.2);
        assert_eq!(e.stable(&x, &y).unwrap_err(), HolonomyError::NotOnLeaf(LeafKind::S));
    }

    #[test]
    fn coboundary_of_identity_closed_form() {
        let spec = coboundary(Mat2::IDENTITY);
        let e = engine(&spec, 1e-10);
        let c = conj();
        for seed in 0..20 {
            for kind in [LeafKind::S, LeafKind::U] {
                let (x, y) = pair(seed, kind, 0.05 + 0.03 * seed as f64);
                let h = e.holonomy(&x, &y, kind).unwrap();
                let expected = c.eval(&cat(), &y) * c.eval(&cat(), &x).inverse();
                assert!(h.matrix.dist(&expected) <= 1e-10, "{kind:?} {}", h.matrix.dist(&expected));
                assert!(h.error_bound < 1e-10);
                assert!((h.matrix.det() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn holonomy_laws() {
        let spec = coboundary(Mat2::diag(1.3, 1.0 / 1.3));
        let tol = 1e-9;
        let e = engine(&spec, tol);
        for seed in 0..10 {
            let x = sample_measure(&cat(), seed);
            let y = leaf_point(&cat(), &x, LeafKind::S, 0.2).unwrap();
            let z = leaf_point(&cat(), &x, LeafKind::S, -0.35).unwrap();
            let hxy = e.stable(&x, &y).unwrap().matrix;
            let hxz = e.stable(&x, &z).unwrap().matrix;
            let hyz = e.stable(&y, &z).unwrap().matrix;
            let hyx = e.stable(&y, &x).unwrap().matrix;
            assert!(hxz.dist(&(hyz * hxy)) <= 3.0 * tol);
            assert!(hyx.dist(&hxy.inverse()) <= 2.0 * tol);
            for j in [0, 1, 3, 10] {
                let aj = cocycle_product(&spec, &cat(), &x, j).unwrap();
                let bound = (1.0 + aj.operator_norm() * aj.inverse().operator_norm()) * tol;
                assert!(e.equivariance_residual(&x, &y, j).unwrap() <= bound);
            }
        }
    }

    #[test]
    fn equivariance_examples() {
        let (x, y) = pair(5, LeafKind::S, 0.4);
        let l = CocycleSpec::constant(Mat2::IDENTITY);
        assert_eq!(equivariance_residual(&l, &cat(), &x, &y, 4, 1e-8).unwrap(), 0.0);
        let e = engine(&coboundary(Mat2::IDENTITY), 1e-9);
        assert_eq!(e.equivariance_residual(&x, &y, 0).unwrap(), 0.0);
        assert!(e.equivariance_residual(&x, &y, 3).unwrap() <= 10.0 * 1e-9);
    }

    #[test]
    fn path_holonomy_examples() {
        let l = CocycleSpec::constant(Mat2::diag(1.1, 1.0 / 1.1));
        assert_eq!(path_holonomy(&l, &cat(), &SuPath::empty(), 1e-9).unwrap().matrix, Mat2::IDENTITY);
        let x = BasePoint::torus(0.1, 0.2);
        let lp = su_connect(&cat(), &x, &BasePoint::torus(0.7, 0.4), 0.5)
            .unwrap()
            .concat(su_connect(&cat(), &BasePoint::torus(0.7, 0.4), &x, 0.5).unwrap());
        let h = path_holonomy(&l, &cat(), &lp, 1e-9).unwrap();
        assert!(h.matrix.dist(&Mat2::IDENTITY) <= 1e-12);

        let e = engine(&coboundary(Mat2::IDENTITY), 1e-9);
        let h = e.path(&lp).unwrap();
        assert!(h.matrix.dist(&Mat2::IDENTITY) <= 1e-9 + h.error_bound);
    }

    #[test]
    fn oseledets_transport() {
        let spec = coboundary(Mat2::diag(1.4, 1.0 / 1.4));
        let e = engine(&spec, 1e-10);
        let cfg = OseledetsConfig::default();
        for seed in 0..5 {
            let (x, y) = pair(seed, LeafKind::S, 0.25);
            let (_, es_x) = oseledets_directions(&spec, &cat(), &x, &cfg).unwrap();
            let (_, es_y) = oseledets_directions(&spec, &cat(), &y, &cfg).unwrap();
            let h = e.stable(&x, &y).unwrap().matrix;
            assert!(projective_action(&h, &es_x).dist(&es_y) <= 1e-4);

            let (x, z) = pair(seed, LeafKind::U, 0.25);
            let (eu_x, _) = oseledets_directions(&spec, &cat(), &x, &cfg).unwrap();
            let (eu_z, _) = oseledets_directions(&spec, &cat(), &z, &cfg).unwrap();
            let h = e.unstable(&x, &z).unwrap().matrix;
            assert!(projective_action(&h, &eu_x).dist(&eu_z) <= 1e-4);
        }
    }

    #[test]
    fn product_system_holonomy_ignores_circle() {
        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::CatMap { power: 2 });
        let spec = CocycleSpec::new(Generator::lift(Side::Left, Generator::constant(Mat2::diag(2.0, 0.5))));
        let e = HolonomyEngine::new(&spec, &sys, HolonomyConfig::with_tol(1e-10)).unwrap();
        let x = sample_measure(&sys, 1);
        let y = leaf_point(&sys, &x, LeafKind::S, 0.3).unwrap();
        assert_eq!(e.stable(&x, &y).unwrap().matrix, Mat2::IDENTITY);
    }

    #[test]
    fn trivialize_examples() {
        let cfg = TrivializeConfig { loops: 20, samples: 40, ..Default::default() };
        let x = BasePoint::torus(0.3, 0.6);
        let l = Mat2::new(2.0, 1.0, 1.0, 1.0);
        let constant = CocycleSpec::constant(l);
        let sys = BaseSystem::with_rates(cat(), PhRates { nu: Some(0.05), nu_hat: Some(0.05), ..Default::default() });
        let e = HolonomyEngine::new(&constant, &sys, HolonomyConfig::with_tol(1e-10)).unwrap();
        let t = trivialize(&e, &x, &cfg).unwrap();
        assert_eq!(t.constant, l);
        assert!(t.table.iter().all(|r| r.value == l));

        let e = engine(&coboundary(Mat2::IDENTITY), 1e-10);
        let t = trivialize(&e, &x, &cfg).unwrap();
        assert!(t.constant.dist(&Mat2::IDENTITY) <= 1e-9);
        assert!(t.max_deviation <= 1e-8, "{}", t.max_deviation);

        let e = engine(&coboundary(Mat2::diag(1.3, 1.0 / 1.3)), 1e-10);
        let t = trivialize(&e, &x, &cfg).unwrap();
        assert!(t.max_deviation <= 1e-6);
        assert!(t.max_deviation <= t.combined_tolerance + 1e-9);
    }

    #[test]
    fn hyperbolic_twist_is_a_loop_obstruction() {
        let twist = CocycleSpec::new(Generator::Diagonal { g: Fourier::constant(0.0).with_term(1, 0, 0.0, 0.2) });
        let e = engine(&twist, 1e-10);
        let cfg = TrivializeConfig { loops: 20, samples: 10, ..Default::default() };
        match trivialize(&e, &BasePoint::torus(0.2, 0.7), &cfg) {
            Err(HolonomyError::LoopObstruction { residual, path }) => {
                assert!(residual > cfg.loop_tol);
                let h = e.path(&path).unwrap();
                assert!(h.matrix.dist(&Mat2::IDENTITY) > cfg.loop_tol);
            }
            other => panic!("expected a loop obstruction, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn holder_continuity(seed in any::<u64>(), d in 1e-4f64..0.05, unstable in any::<bool>()) {
            let kind = if unstable { LeafKind::U } else { LeafKind::S };
            let e = engine(&coboundary(Mat2::diag(1.3, 1.0 / 1.3)), 1e-11);
            // the bound only exists once the local contraction beats the drift
            let bound = e.increment_bound(kind, d);
            prop_assume!(bound.is_some());
            let bound = bound.unwrap();
            let (x, y) = pair(seed, kind, d);
            let h = e.holonomy(&x, &y, kind).unwrap();
            prop_assert!(h.matrix.dist(&Mat2::IDENTITY) <= bound + h.error_bound);
        }

        #[test]
        fn error_bound_is_honest(seed in any::<u64>(), d in 0.01f64..0.6) {
            // compare against a far tighter computation
            let spec = coboundary(Mat2::diag(1.3, 1.0 / 1.3));
            let coarse = engine(&spec, 1e-6);
            let fine = engine(&spec, 1e-13);
            let (x, y) = pair(seed, LeafKind::S, d);
            let a = coarse.stable(&x, &y).unwrap();
            let b = fine.stable(&x, &y).unwrap();
            prop_assert!(a.error_bound < 1e-6);
            prop_assert!(a.matrix.dist(&b.matrix) <= a.error_bound + b.error_bound);
        }
    }
}
