//! One function per subcommand. Each reads what it needs from the config
//! and returns the result value plus optional plot columns.

use cocycle_core::base::{check_center_bunching, leaf_point, LeafKind};
use cocycle_core::cocycle::{lyapunov_pair, lyapunov_top, CocycleError, CocycleSpec, Generator};
use cocycle_core::constructions::{
    random_product_exponent, trivial_extension_bunching, trivial_extension_exponent, ConstructionError,
    RandomProductConfig, TrivialExtensionConfig,
};
use cocycle_core::holonomy::{fiber_bunching, trivialize, HolonomyConfig, HolonomyEngine, HolonomyError, TrivializeConfig};
use cocycle_core::matrix::{classify, Mat2, DEFAULT_CLASSIFY_TOL};
use cocycle_core::measure::{
    detect_atoms, empirical_fiber_measure, FiberMeasureConfig, MeasureError, DEFAULT_BINS, DEFAULT_CLUSTER_RADIUS,
    DEFAULT_MASS_FLOOR,
};
use cocycle_core::{BaseSystem, ProjPoint};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{self, Config, ConfigError};
use crate::output::Columns;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("not on leaf: {0}")]
    NotOnLeaf(String),
    #[error("not fiber-bunched: {0}")]
    NotFiberBunched(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NotOnLeaf(_) => 4,
            CliError::NotFiberBunched(_) => 5,
        }
    }
}

impl From<HolonomyError> for CliError {
    fn from(e: HolonomyError) -> Self {
        match e {
            HolonomyError::NotOnLeaf(_) => CliError::NotOnLeaf(e.to_string()),
            HolonomyError::NotFiberBunched { .. } => CliError::NotFiberBunched(e.to_string()),
            HolonomyError::NoConvergence { .. } | HolonomyError::LoopObstruction { .. } => CliError::Numeric(e.to_string()),
            HolonomyError::Base(_) | HolonomyError::PathUnreachable(_) | HolonomyError::InvalidParameter(_) => {
                CliError::Config(ConfigError::invalid("base", e.to_string()))
            }
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::InsufficientSamples { .. } => CliError::Numeric(e.to_string()),
            MeasureError::InvalidParameter(m) => CliError::Config(ConfigError::invalid("measure", m)),
        }
    }
}

impl From<ConstructionError> for CliError {
    fn from(e: ConstructionError) -> Self {
        match e {
            ConstructionError::Holonomy(h) => h.into(),
            other => CliError::Config(ConfigError::invalid("example", other.to_string())),
        }
    }
}

impl From<CocycleError> for CliError {
    fn from(e: CocycleError) -> Self {
        match e {
            CocycleError::InvalidSpec(m) => CliError::Config(ConfigError::invalid("cocycle", m)),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

pub type Output = (Value, Option<Columns>);

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

pub fn seed(cfg: &Config) -> Result<u64, ConfigError> {
    cfg.parse("seed")
}

fn system_and_spec(cfg: &Config) -> Result<(BaseSystem, CocycleSpec), CliError> {
    let sys = config::base_system(cfg, "base")?;
    let spec = config::spec(cfg)?;
    spec.check_system(&sys)?;
    Ok((sys, spec))
}

fn iterations(cfg: &Config, default: u64) -> Result<u64, ConfigError> {
    cfg.positive_or("iterations", default)
}

fn orbits(cfg: &Config) -> Result<u64, ConfigError> {
    cfg.positive_or("orbits", 16)
}

fn tol(cfg: &Config, default: f64) -> Result<f64, ConfigError> {
    cfg.positive_or("tol", default)
}

pub fn lyapunov(cfg: &Config) -> Result<Output, CliError> {
    let seed = seed(cfg)?;
    let (sys, spec) = system_and_spec(cfg)?;
    let (n, orbits) = (iterations(cfg, 100_000)?, orbits(cfg)?);
    let (top, bottom) = lyapunov_pair(&spec, &sys, n, orbits, seed);
    if !top.value.is_finite() || !bottom.value.is_finite() {
        return Err(CliError::Numeric("non-finite exponent".into()));
    }
    let result = json!({
        "lambda_u": top.value,
        "lambda_s": bottom.value,
        "std_error": top.std_error,
        "std_error_s": bottom.std_error,
        "n": n,
        "orbits": orbits,
    });
    let cols = vec![(top.value, top.std_error), (bottom.value, bottom.std_error)];
    Ok((result, Some(cols)))
}

fn leaf_kind(cfg: &Config) -> Result<LeafKind, ConfigError> {
    match cfg.string_or("kind", "s").as_str() {
        "s" | "stable" => Ok(LeafKind::S),
        "u" | "unstable" => Ok(LeafKind::U),
        other => Err(ConfigError::invalid("kind", format!("expected s or u, got {other:?}"))),
    }
}

fn holonomy_config(cfg: &Config) -> Result<HolonomyConfig, ConfigError> {
    Ok(HolonomyConfig {
        tol: tol(cfg, 1e-9)?,
        grid_size: cfg.positive_or("grid_size", 10_000)?,
        ..HolonomyConfig::default()
    })
}

pub fn holonomy(cfg: &Config) -> Result<Output, CliError> {
    let seed = seed(cfg)?;
    let (sys, spec) = system_and_spec(cfg)?;
    let kind = leaf_kind(cfg)?;
    let x = config::point_or_sample(cfg, "x", &sys, seed)?;
    let y = match cfg.opt_string("distance") {
        Some(d) => {
            let d: f64 = d.parse().map_err(|_| ConfigError::invalid("distance", "cannot parse"))?;
            leaf_point(&sys, &x, kind, d).map_err(|e| ConfigError::invalid("distance", e.to_string()))?
        }
        None => config::point_or_sample(cfg, "y", &sys, seed.wrapping_add(1))?,
    };
    let engine = HolonomyEngine::new(&spec, &sys, holonomy_config(cfg)?)?;
    let h = engine.holonomy(&x, &y, kind)?;
    let m = h.matrix;
    let result = json!({
        "matrix": [m.a, m.b, m.c, m.d],
        "error_bound": h.error_bound,
        "truncation_n": h.truncation_n,
        "kind": kind,
        "x": h.endpoints.0,
        "y": h.endpoints.1,
        "fiber_bunching": engine.report(),
    });
    Ok((result, None))
}

/// Matrix entries come from `matrix=a,b,c,d` or four positional numbers.
pub fn classify_cmd(cfg: &Config, entries: &[f64]) -> Result<Output, CliError> {
    let m = if entries.is_empty() {
        config::parse_matrix(cfg, "matrix")?
    } else {
        config::matrix_from(entries).map_err(|e| ConfigError::invalid("matrix", e))?
    };
    let tol = tol(cfg, DEFAULT_CLASSIFY_TOL)?;
    if (m.det() - 1.0).abs() > tol.max(1e-12) {
        return Err(ConfigError::invalid("matrix", format!("determinant {} is not 1", m.det())).into());
    }
    let c = classify(&m, tol);
    let result = json!({
        "matrix": [m.a, m.b, m.c, m.d],
        "kind": c.kind,
        "angle": c.angle,
        "fixed_points": c.fixed_points.iter().map(ProjPoint::theta).collect::<Vec<_>>(),
        "trace": m.trace(),
    });
    Ok((result, None))
}

pub fn measure(cfg: &Config) -> Result<Output, CliError> {
    let seed = seed(cfg)?;
    let (sys, spec) = system_and_spec(cfg)?;
    let x = config::point_or_sample(cfg, "x", &sys, seed)?;
    let mc = FiberMeasureConfig {
        iterations: iterations(cfg, 1_000_000)?,
        burn_in: cfg.parse_or("burn_in", 1_000)?,
        bins: cfg.positive_or("bins", DEFAULT_BINS)?,
        radius: cfg.positive_or("radius", 0.02)?,
        orbits: cfg.positive_or("orbits", 1)?,
        seed,
        initial: ProjPoint::new(cfg.parse_or("initial", 1.0)?),
        min_samples: cfg.parse_or("min_samples", 100)?,
    };
    let m = empirical_fiber_measure(&spec, &sys, &x, &mc)?;
    let report = detect_atoms(
        &m.measure,
        cfg.positive_or("mass_floor", DEFAULT_MASS_FLOOR)?,
        cfg.parse_or("cluster_radius", DEFAULT_CLUSTER_RADIUS)?,
    );
    let masses = m.measure.bin_masses(mc.bins);
    let w = std::f64::consts::PI / mc.bins as f64;
    let cols: Columns = masses.iter().enumerate().map(|(j, p)| ((j as f64 + 0.5) * w, *p)).collect();
    let result = json!({
        "x": x,
        "samples": m.samples,
        "bins": mc.bins,
        "histogram": masses,
        "atoms": report.atoms.iter().map(|(p, m)| json!({"theta": p.theta(), "mass": m})).collect::<Vec<_>>(),
        "diffuse_mass": report.diffuse_mass,
        "verdict": report.verdict.to_string(),
    });
    Ok((result, Some(cols)))
}

pub fn trivialize_cmd(cfg: &Config) -> Result<Output, CliError> {
    let seed = seed(cfg)?;
    let (sys, spec) = system_and_spec(cfg)?;
    let x = config::point_or_sample(cfg, "x", &sys, seed)?;
    let engine = HolonomyEngine::new(&spec, &sys, holonomy_config(cfg)?)?;
    let defaults = TrivializeConfig::default();
    let tc = TrivializeConfig {
        loops: cfg.positive_or("loops", defaults.loops)?,
        samples: cfg.positive_or("samples", defaults.samples)?,
        leg_length: cfg.positive_or("leg_length", defaults.leg_length)?,
        loop_tol: cfg.positive_or("loop_tol", defaults.loop_tol)?,
        projective: cfg.parse_or("projective", false)?,
        seed,
    };
    let t = trivialize(&engine, &x, &tc)?;
    let (n, orbits) = (iterations(cfg, 100_000)?, orbits(cfg)?);
    let lam = lyapunov_top(&spec, &sys, n, orbits, seed);
    // exact for a constant: (1/n)·log‖Âⁿ‖
    let lam_hat = lyapunov_top(&CocycleSpec::constant(t.constant), &sys, n, 1, seed).value;
    // Aⁿ(y) = H_{fⁿ(y)x}⁻¹·Âⁿ·H_{xy}⁻¹ and ‖H⁻¹‖ = ‖H‖ in SL(2,R)
    let tolerance = 3.0 * lam.std_error + 2.0 * t.holonomy_norm_bound.ln().max(0.0) / n as f64;
    let c = t.constant;
    let result = json!({
        "x": t.basepoint,
        "constant": [c.a, c.b, c.c, c.d],
        "loops_checked": t.loops_checked,
        "max_loop_residual": t.max_loop_residual,
        "samples": t.table.len(),
        "max_deviation": t.max_deviation,
        "combined_tolerance": t.combined_tolerance,
        "holonomy_norm_bound": t.holonomy_norm_bound,
        "lambda_u": lam.value,
        "lambda_u_std_error": lam.std_error,
        "lambda_u_constant": lam_hat,
        "exponent_tolerance": tolerance,
        "exponents_agree": (lam.value - lam_hat).abs() <= tolerance,
    });
    Ok((result, None))
}

pub fn example(cfg: &Config, name: &str) -> Result<Output, CliError> {
    let seed = seed(cfg)?;
    let (n, orbits) = (iterations(cfg, 100_000)?, orbits(cfg)?);
    let default_a0 = Generator::constant(Mat2::diag(2.0, 0.5));
    let a0 = |cfg: &Config| -> Result<Generator, ConfigError> {
        if cfg.contains("a0.kind") || cfg.contains("a0.matrix") {
            config::generator(cfg, "a0", "constant")
        } else {
            cfg.string_or("a0.kind", "constant");
            cfg.floats_or("a0.matrix", &[2.0, 0.0, 0.0, 0.5])?;
            Ok(default_a0.clone())
        }
    };
    match name {
        "theorem-b" => {
            let base = TrivialExtensionConfig::new(a0(cfg)?);
            let tc = TrivialExtensionConfig {
                omega: cfg.parse_or("omega", base.omega)?,
                cat_power: cfg.positive_or("power", base.cat_power)?,
                ..base
            };
            tc.spec().check_system(&tc.system())?;
            let r = trivial_extension_exponent(&tc, n, orbits, seed);
            let bunching = match trivial_extension_bunching(&tc, cfg.positive_or("grid_size", 1_000)?) {
                Ok((fb, cb)) => json!({"fiber": fb, "center": cb}),
                Err(e) => json!({"error": e.to_string()}),
            };
            let result = json!({
                "example": name,
                "product": r.product,
                "factor": r.factor,
                "discrepancy": r.discrepancy,
                "tolerance": r.tolerance,
                "agree": r.agrees(),
                "bunching": bunching,
            });
            Ok((result, None))
        }
        "random-product" => {
            let p0: f64 = cfg.parse_or("p0", 0.5)?;
            if !(p0 > 0.0 && p0 <= 1.0) {
                return Err(ConfigError::invalid("p0", "must lie in (0, 1]").into());
            }
            let rc = RandomProductConfig::two_symbol(p0, a0(cfg)?);
            rc.spec().check_system(&rc.system()?)?;
            let r = random_product_exponent(&rc, n, orbits, seed)?;
            let tolerance = 3.0 * (r.direct.std_error + p0 * r.base_exponent.std_error);
            let result = json!({
                "example": name,
                "p0": p0,
                "direct": r.direct,
                "base_exponent": r.base_exponent,
                "formula": r.formula,
                "discrepancy": r.discrepancy,
                "tolerance": tolerance,
                "agree": r.discrepancy <= tolerance,
            });
            Ok((result, None))
        }
        other => Err(ConfigError::invalid("example", format!("unknown example {other:?} (theorem-b, random-product)")).into()),
    }
}

pub fn check_bunching(cfg: &Config) -> Result<Output, CliError> {
    let (sys, spec) = system_and_spec(cfg)?;
    let report = fiber_bunching(&spec, &sys, cfg.positive_or("grid_size", 10_000)?)?;
    let center = match check_center_bunching(&sys) {
        Ok(c) => to_value(&c),
        Err(e) => json!({"error": e.to_string()}),
    };
    Ok((json!({"fiber": report, "center": center}), None))
}
