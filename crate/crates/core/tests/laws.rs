//! Cross-module laws exercised through the public API only.

use cocycle_core::base::{leaf_distance, leaf_point, sample_measure, GOLDEN_MEAN};
use cocycle_core::cocycle::{birkhoff_average, cocycle_product, lyapunov_pair, lyapunov_top, CocycleSpec, Fourier, Generator};
use cocycle_core::holonomy::{HolonomyConfig, HolonomyEngine};
use cocycle_core::{BaseSystem, LeafKind, Mat2};
use proptest::prelude::*;

fn cat() -> BaseSystem {
    BaseSystem::cat_map()
}

fn coboundary(conj_amp: f64, l: f64) -> CocycleSpec {
    let conj = Generator::Pointwise {
        factors: vec![
            Generator::Shear { h: Fourier::constant(0.0).with_term(1, 0, conj_amp, 0.0) },
            Generator::Rotation { h: Fourier::constant(0.0).with_term(0, 1, 0.0, conj_amp / 2.0) },
        ],
    };
    CocycleSpec::new(Generator::coboundary(conj, Generator::constant(Mat2::diag(l, 1.0 / l))))
}

fn kind(unstable: bool) -> LeafKind {
    if unstable {
        LeafKind::U
    } else {
        LeafKind::S
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn holonomy_groupoid_laws(
        seed in any::<u64>(),
        d1 in -0.5f64..0.5,
        d2 in -0.5f64..0.5,
        amp in 0.0f64..0.08,
        l in 1.0f64..1.4,
        unstable in any::<bool>(),
    ) {
        let tol = 1e-9;
        let spec = coboundary(amp, l);
        let e = HolonomyEngine::new(&spec, &cat(), HolonomyConfig { grid_size: 1000, ..HolonomyConfig::with_tol(tol) }).unwrap();
        let k = kind(unstable);
        let x = sample_measure(&cat(), seed);
        let y = leaf_point(&cat(), &x, k, d1).unwrap();
        let z = leaf_point(&cat(), &x, k, d2).unwrap();
        let hxy = e.holonomy(&x, &y, k).unwrap().matrix;
        let hxz = e.holonomy(&x, &z, k).unwrap().matrix;
        let hyz = e.holonomy(&y, &z, k).unwrap().matrix;
        let hyx = e.holonomy(&y, &x, k).unwrap().matrix;
        prop_assert!(hxz.dist(&(hyz * hxy)) <= 3.0 * tol);
        prop_assert!(hyx.dist(&hxy.inverse()) <= 2.0 * tol);
        prop_assert!((hxy.det() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cat_leaves_scale_by_lambda(seed in any::<u64>(), d in -0.5f64..0.5, unstable in any::<bool>()) {
        let lambda = (3.0 + 5f64.sqrt()) / 2.0;
        let k = kind(unstable);
        let x = sample_measure(&cat(), seed);
        let y = leaf_point(&cat(), &x, k, d).unwrap();
        let (fx, fy) = (cat().step(&x, 1), cat().step(&y, 1));
        let expected = if unstable { d * lambda } else { d / lambda };
        let got = leaf_distance(&cat(), &fx, &fy, k).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn coboundary_exponent_is_that_of_the_inner_constant(seed in any::<u64>(), amp in 0.0f64..0.3, l in 1.0f64..3.0) {
        let spec = coboundary(amp, l);
        let (top, bottom) = lyapunov_pair(&spec, &cat(), 4000, 4, seed);
        // ‖Aⁿ‖ differs from lⁿ by at most the conjugator condition numbers
        prop_assert!((top.value - l.ln()).abs() <= 0.01);
        prop_assert!((top.value + bottom.value).abs() <= 1e-12 + 2.0 * (top.std_error + bottom.std_error));
    }

    #[test]
    fn scaling_shifts_the_exponent_by_the_mean_log_factor(seed in any::<u64>(), c in -1.0f64..1.0, a in -0.5f64..0.5) {
        let sys = BaseSystem::rotation(GOLDEN_MEAN);
        let inner = Generator::Rotation { h: Fourier::circle(0.0, 1, 0.1, 0.0) };
        let inner = Generator::Pointwise { factors: vec![inner, Generator::constant(Mat2::diag(1.5, 1.0 / 1.5))] };
        let log_g = Fourier::circle(c, 1, a, 0.0);
        let b = CocycleSpec::new(inner.clone());
        let scaled = CocycleSpec::new(Generator::scaled(log_g.clone(), inner));
        let (n, orbits) = (5000, 4);
        let la = lyapunov_top(&scaled, &sys, n, orbits, seed);
        let lb = lyapunov_top(&b, &sys, n, orbits, seed);
        let mean = birkhoff_average(&sys, n, orbits, seed, |x| log_g.eval(x));
        prop_assert!((la.value - lb.value - mean.value).abs() <= 1e-9);
    }

    #[test]
    fn products_compose_over_random_lengths(seed in any::<u64>(), n in -20i64..=20, m in -20i64..=20) {
        let spec = coboundary(0.05, 1.3);
        let x = sample_measure(&cat(), seed);
        let a = cocycle_product(&spec, &cat(), &x, n).unwrap();
        let b = cocycle_product(&spec, &cat(), &cat().step(&x, n), m).unwrap();
        let ab = cocycle_product(&spec, &cat(), &x, n + m).unwrap();
        let scale = b.operator_norm() * a.operator_norm();
        prop_assert!(ab.dist(&(b * a)) <= 1e-9 * scale);
    }
}

#[test]
fn fiber_bunching_is_required_for_holonomies() {
    let strong = CocycleSpec::constant(Mat2::diag(3.0, 1.0 / 3.0));
    assert!(HolonomyEngine::new(&strong, &cat(), HolonomyConfig::default()).is_err());
    let powered = BaseSystem::CatMap { power: 3 };
    assert!(HolonomyEngine::new(&strong, &powered, HolonomyConfig::default()).is_ok());
}
