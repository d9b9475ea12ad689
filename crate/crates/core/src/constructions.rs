//! Ready-made constructions: the trivial extension of a circle cocycle by a
//! hyperbolic factor, and random products of cocycles over a shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::base::{check_center_bunching, su_connect, BaseError, BasePoint, BaseSystem, CenterBunching, ShiftPoint, GOLDEN_MEAN};
use crate::cocycle::{lyapunov_top, CocycleSpec, Fourier, Generator, LyapunovEstimate, Side};
use crate::holonomy::{fiber_bunching, FiberBunchingReport, HolonomyError};
use crate::matrix::Mat2;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("structure violation: {0}")]
    StructureViolation(String),
    #[error(transparent)]
    Base(#[from] BaseError),
    #[error(transparent)]
    Holonomy(#[from] HolonomyError),
    #[error("unknown example {0:?}")]
    UnknownExample(String),
}

/// `τₙ(x) = #{1 ≤ j ≤ n : (σʲx)₀ = 0}`.
pub fn tau_count(x: &ShiftPoint, n: u64) -> u64 {
    (1..=n as i64).filter(|&j| x.symbol(j) == 0).count() as u64
}

/// Over a shift on `k` symbols, the skew map `(x, t) ↦ (σx, f_{x₀}(t))`
/// with `f_j` the rotation by `fiber_rotations[j]`, and the cocycle
/// `A(x, t) = A_{x₀}(t)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomProductConfig {
    pub probs: Vec<f64>,
    pub fiber_rotations: Vec<f64>,
    pub generators: Vec<Generator>,
}

impl RandomProductConfig {
    /// Two symbols with `A₀ = diag(2, ½)` over the golden rotation and
    /// `A₁ = Id` over the identity.
    pub fn standard(p0: f64) -> Self {
        Self::two_symbol(p0, Generator::constant(Mat2::diag(2.0, 0.5)))
    }

    /// At `p₀ = 1` the second symbol has probability zero and is dropped.
    pub fn two_symbol(p0: f64, a0: Generator) -> Self {
        if p0 == 1.0 {
            return Self { probs: vec![1.0], fiber_rotations: vec![GOLDEN_MEAN], generators: vec![a0] };
        }
        Self {
            probs: vec![p0, 1.0 - p0],
            fiber_rotations: vec![GOLDEN_MEAN, 0.0],
            generators: vec![a0, Generator::constant(Mat2::IDENTITY)],
        }
    }

    pub fn system(&self) -> Result<BaseSystem, ConstructionError> {
        Ok(BaseSystem::shift_skew(self.probs.clone(), self.fiber_rotations.clone())?)
    }

    pub fn spec(&self) -> CocycleSpec {
        CocycleSpec::new(Generator::RandomProduct { generators: self.generators.clone() })
    }

    /// Checks the structure under which `Aⁿ(x, t) = A₀^{τ}(t)`: every
    /// symbol but 0 carries the identity matrix and the identity fiber map.
    pub fn check_collapse(&self) -> Result<(), ConstructionError> {
        if self.generators.len() != self.probs.len() {
            return Err(ConstructionError::StructureViolation("one generator per symbol is required".into()));
        }
        if !self.generators.iter().all(Generator::is_sl) {
            return Err(ConstructionError::StructureViolation("generators must be SL-valued".into()));
        }
        for j in 1..self.probs.len() {
            if self.generators[j] != Generator::constant(Mat2::IDENTITY) {
                return Err(ConstructionError::StructureViolation(format!("A_{j} is not the identity")));
            }
            if self.fiber_rotations[j].rem_euclid(1.0) != 0.0 {
                return Err(ConstructionError::StructureViolation(format!("f_{j} is not the identity")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomProductReport {
    pub p0: f64,
    pub direct: LyapunovEstimate,
    /// Exponent of `A₀` over the rotation `f₀`.
    pub base_exponent: LyapunovEstimate,
    /// `p₀·λᵘ(A₀)`.
    pub formula: f64,
    pub discrepancy: f64,
}

/// Direct estimate of `λᵘ` for the random product against `p₀·λᵘ(A₀)`.
pub fn random_product_exponent(
    cfg: &RandomProductConfig,
    n: u64,
    orbits: u64,
    seed: u64,
) -> Result<RandomProductReport, ConstructionError> {
    cfg.check_collapse()?;
    let sys = cfg.system()?;
    let direct = lyapunov_top(&cfg.spec(), &sys, n, orbits, seed);
    let base = BaseSystem::rotation(cfg.fiber_rotations[0]);
    let base_exponent = lyapunov_top(&CocycleSpec::new(cfg.generators[0].clone()), &base, n, orbits, factor_seed(seed));
    let p0 = cfg.probs[0];
    let formula = p0 * base_exponent.value;
    Ok(RandomProductReport { p0, direct, base_exponent, formula, discrepancy: (direct.value - formula).abs() })
}

/// The factor side of a comparison runs on an independent seed, so the two
/// estimates are statistically independent.
fn factor_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// `Product(Rotation(ω), CatMap(power))` with `Â(t, x) = A₀(t)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrivialExtensionConfig {
    pub omega: f64,
    pub cat_power: u32,
    pub a0: Generator,
}

impl TrivialExtensionConfig {
    pub fn new(a0: Generator) -> Self {
        Self { omega: GOLDEN_MEAN, cat_power: 2, a0 }
    }

    pub fn system(&self) -> BaseSystem {
        BaseSystem::product(BaseSystem::rotation(self.omega), BaseSystem::CatMap { power: self.cat_power })
    }

    pub fn spec(&self) -> CocycleSpec {
        CocycleSpec::new(Generator::lift(Side::Left, self.a0.clone()))
    }

    pub fn factor_system(&self) -> BaseSystem {
        BaseSystem::rotation(self.omega)
    }

    pub fn factor_spec(&self) -> CocycleSpec {
        CocycleSpec::new(self.a0.clone())
    }

    /// The three shipped `A₀`: hyperbolic constant, rotation valued, and a
    /// hyperbolic matrix turning once around the circle.
    pub fn families() -> Vec<(&'static str, TrivialExtensionConfig)> {
        vec![
            ("hyperbolic", Self::new(Generator::constant(Mat2::diag(2.0, 0.5)))),
            ("rotations", Self::new(Generator::Rotation { h: Fourier::circle(0.1, 1, 0.05, 0.0) })),
            (
                "twisted",
                Self::new(Generator::Pointwise {
                    factors: vec![
                        Generator::Winding { kx: 1, ky: 0 },
                        Generator::constant(Mat2::diag(3.0, 1.0 / 3.0)),
                        Generator::Winding { kx: -1, ky: 0 },
                    ],
                }),
            ),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrivialExtensionReport {
    pub product: LyapunovEstimate,
    pub factor: LyapunovEstimate,
    pub discrepancy: f64,
    /// `3·(σ_product + σ_factor)`
    pub tolerance: f64,
}

impl TrivialExtensionReport {
    pub fn agrees(&self) -> bool {
        self.discrepancy <= self.tolerance
    }
}

/// `λᵘ` of `Â` over the product against `λᵘ` of `A₀` over the rotation.
pub fn trivial_extension_exponent(cfg: &TrivialExtensionConfig, n: u64, orbits: u64, seed: u64) -> TrivialExtensionReport {
    let product = lyapunov_top(&cfg.spec(), &cfg.system(), n, orbits, seed);
    let factor = lyapunov_top(&cfg.factor_spec(), &cfg.factor_system(), n, orbits, factor_seed(seed));
    TrivialExtensionReport {
        discrepancy: (product.value - factor.value).abs(),
        tolerance: 3.0 * (product.std_error + factor.std_error),
        product,
        factor,
    }
}

/// Fiber- and center-bunching of the trivial extension.
pub fn trivial_extension_bunching(
    cfg: &TrivialExtensionConfig,
    grid_size: usize,
) -> Result<(FiberBunchingReport, CenterBunching), ConstructionError> {
    let sys = cfg.system();
    Ok((fiber_bunching(&cfg.spec(), &sys, grid_size)?, check_center_bunching(&sys)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccessibilityReport {
    pub trials: u64,
    /// Pairs with distinct circle coordinates that `su_connect` refused.
    pub cross_fiber_unsupported: u64,
    /// Pairs with equal circle coordinates that `su_connect` joined.
    pub same_fiber_connected: u64,
    /// Every leg of every returned path keeps the circle coordinate.
    pub circle_preserved: bool,
    pub max_legs: usize,
    pub equal_points_give_empty_path: bool,
}

/// Random pairs on the trivial extension: su-paths never leave a circle
/// fiber, so the product is not accessible.
pub fn accessibility_probe(cfg: &TrivialExtensionConfig, trials: u64, seed: u64) -> AccessibilityReport {
    let sys = cfg.system();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AccessibilityReport {
        trials,
        cross_fiber_unsupported: 0,
        same_fiber_connected: 0,
        circle_preserved: true,
        max_legs: 0,
        equal_points_give_empty_path: true,
    };
    for _ in 0..trials {
        let x = sys.sample_with(&mut rng);
        let mut y = sys.sample_with(&mut rng);
        if x.left() != y.left() && matches!(su_connect(&sys, &x, &y, 1.0), Err(BaseError::UnsupportedSystem(_))) {
            report.cross_fiber_unsupported += 1;
        }
        // same circle coordinate, independent torus coordinate
        y = BasePoint::product(x.left().unwrap().clone(), y.right().unwrap().clone());
        if let Ok(path) = su_connect(&sys, &x, &y, 1.0) {
            if path.start() == Some(&x) && path.end() == Some(&y) {
                report.same_fiber_connected += 1;
            }
            report.max_legs = report.max_legs.max(path.legs.len());
            let t = x.circle_coordinate();
            report.circle_preserved &=
                path.legs.iter().all(|l| l.start.circle_coordinate() == t && l.end.circle_coordinate() == t);
        }
        report.equal_points_give_empty_path &= su_connect(&sys, &x, &x, 1.0).is_ok_and(|p| p.legs.is_empty());
    }
    report
}

/// Named configurations.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Example {
    TheoremB(TrivialExtensionConfig),
    RandomProduct(RandomProductConfig),
}

impl Example {
    pub fn named(name: &str) -> Result<Self, ConstructionError> {
        match name {
            "theorem-b" => Ok(Example::TheoremB(TrivialExtensionConfig::new(Generator::constant(Mat2::diag(2.0, 0.5))))),
            "random-product" => Ok(Example::RandomProduct(RandomProductConfig::standard(0.5))),
            other => Err(ConstructionError::UnknownExample(other.into())),
        }
    }

    pub const NAMES: [&'static str; 2] = ["theorem-b", "random-product"];
}

/// A sample of circle points, for checks on `A₀` alone.
pub fn circle_grid(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| rng.gen::<f64>()).collect()
}

/// `‖A‖·‖A⁻¹‖·(1/λ₊)^{α·power}` maximized over `ts`, the fiber-bunching
/// quantity of the trivial extension.
pub fn bunching_quantity(cfg: &TrivialExtensionConfig, alpha: f64, ts: &[f64]) -> f64 {
    let nu = crate::base::cat_lambda().powi(-(cfg.cat_power as i32));
    let sys = cfg.factor_system();
    ts.iter()
        .map(|t| cfg.a0.eval(&sys, &BasePoint::circle(*t)).condition_number())
        .fold(0.0, f64::max)
        * nu.powf(alpha)
}
