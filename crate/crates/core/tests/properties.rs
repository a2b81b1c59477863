//! Property tests: kernel normalization, rescaling round trips, and the
//! nonnegativity floor of the right-hand side.

use proptest::prelude::*;

use dde_permanence::system::{DelayKernel, FnHistory};
use dde_permanence::timefn::{CoefficientFn, Expr};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_kernels_have_unit_mass(width in 0.05f64..3.0, t in 0.0f64..50.0) {
        let k = DelayKernel::UniformDensity { width: CoefficientFn::constant(width) };
        let mass = k.mass(t).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn triangular_densities_have_unit_mass(support in 0.1f64..2.0, t in 0.0f64..50.0) {
        // k(s) = 2 (support + s) / support² on [-support, 0]
        let shape = Expr::affine(2.0 / (support * support), 2.0 / support);
        let k = DelayKernel::Density { shape, support };
        let mass = k.mass(t).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn scaling_round_trips_bit_near(v1 in 0.05f64..20.0, v2 in 0.05f64..20.0) {
        let sys = dde_permanence::models::two_patch_nicholson().spec;
        let there = sys.scale_system(&[v1, v2]).unwrap();
        let back = there.scale_system(&[1.0 / v1, 1.0 / v2]).unwrap();
        for &t in &[0.0, 3.0, 41.0] {
            let a0 = sys.linear[0][1].as_ref().unwrap().a.eval(t).unwrap();
            let a1 = back.linear[0][1].as_ref().unwrap().a.eval(t).unwrap();
            prop_assert!((a0 - a1).abs() <= 1e-14 * a0.abs().max(1.0));
            // birth responses agree on a positive probe state
            let h = FnHistory { n: 2, f: |_, _| 0.9 };
            let f0 = sys.birth[0].as_ref().unwrap().eval(0, t, 1.0, &h).unwrap();
            let f1 = back.birth[0].as_ref().unwrap().eval(0, t, 1.0, &h).unwrap();
            prop_assert!((f0 - f1).abs() <= 1e-13 * f0.abs().max(1.0));
        }
    }

    #[test]
    fn rhs_dominates_pure_decay_on_random_histories(
        base in 0.0f64..4.0,
        slope in -0.5f64..0.5,
        t in 1.0f64..40.0,
    ) {
        // nonnegative affine-in-time histories; birth and coupling only add
        let sys = dde_permanence::models::two_patch_nicholson().spec;
        let hist = FnHistory {
            n: 2,
            f: move |i, s: f64| (base + slope * (s - t) * (i as f64 + 1.0) / 4.0).max(0.0),
        };
        let rhs = sys.rhs_eval(t, &hist).unwrap();
        for i in 0..2 {
            let xi = (base).max(0.0);
            let floor = -sys.d[i].eval(t).unwrap() * xi;
            prop_assert!(rhs[i] >= floor - 1e-12);
        }
    }
}
