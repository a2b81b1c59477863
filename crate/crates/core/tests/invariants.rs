//! Cross-module invariants: cone invariance, certificate re-verification,
//! scaling invariance of statuses, the additive-to-ratio implication,
//! comparison with the cooperative lower system, and floor consistency.

use dde_permanence::experiments::{
    comparison_check, estimate_permanence, make_ensemble, window_minima_sequence, EnsembleSpec,
};
use dde_permanence::hypotheses::{
    analyze, reverify_witness, CheckOptions, CheckStatus, GridSpec, VerdictKind,
};
use dde_permanence::integrator::{integrate, InitialSegment, IntegrateOptions};
use dde_permanence::models;

fn default_grid() -> GridSpec {
    GridSpec::new(10.0, 1e4, 400)
}

#[test]
fn cone_invariance_of_positive_builtins() {
    // positive coupling and birth keep solutions from admissible data
    // strictly positive; the floor monitor would abort otherwise
    for name in models::BUILTIN_NAMES {
        if name == "example3.1" {
            continue; // linear fixture is covered below with its own data
        }
        let fx = models::builtin(name).unwrap();
        let step = if fx.spec.tau > 0.0 {
            (fx.spec.tau / 4.0).min(5e-3)
        } else {
            5e-3
        };
        let horizon = fx.spec.domain_start + 20.0;
        for init in [
            fx.default_init.clone(),
            InitialSegment::Constant(vec![0.05; fx.spec.n]),
            InitialSegment::Constant(vec![2.5; fx.spec.n]),
        ] {
            let out = integrate(&fx.spec, &init, horizon, &IntegrateOptions::with_step(step));
            assert!(out.is_ok(), "{name}: {:?}", out.err());
            assert!(out.unwrap().stats.min_state > 0.0, "{name}");
        }
    }
    // the linear pair from its positive closed-form segment
    let fx = models::builtin("example3.1").unwrap();
    let out = integrate(
        &fx.spec,
        &fx.default_init,
        20.0,
        &IntegrateOptions::with_step(2e-4),
    )
    .unwrap();
    assert!(out.stats.min_state > 0.0);
}

#[test]
fn certified_witnesses_survive_refined_grids() {
    let grid = default_grid();
    for name in models::BUILTIN_NAMES {
        let fx = models::builtin(name).unwrap();
        let rep = analyze(&fx.spec, &grid, &CheckOptions::default()).unwrap();
        for status in [&rep.h2, &rep.h2_star, &rep.h5, &rep.h5_star] {
            if let Some(w) = status.witness() {
                let ok = reverify_witness(&fx.spec, w, 10, 0.5).unwrap();
                assert!(ok, "{name}: {} failed 10x re-verification", w.hypothesis);
            }
        }
    }
}

#[test]
fn statuses_are_invariant_under_rescaling() {
    let grid = default_grid();
    let opts = CheckOptions::default();
    let cases: Vec<(&str, Vec<f64>)> = vec![
        ("nicholson2patch", vec![2.0, 0.5]),
        ("example3.3", vec![0.3, 1.7]),
        ("example3.4", vec![2.5]),
    ];
    for (name, v) in cases {
        let fx = models::builtin(name).unwrap();
        let scaled = fx.spec.scale_system(&v).unwrap();
        let a = analyze(&fx.spec, &grid, &opts).unwrap();
        let b = analyze(&scaled, &grid, &opts).unwrap();
        assert_eq!(a.h2.word(), b.h2.word(), "{name} H2");
        assert_eq!(a.h2_star.word(), b.h2_star.word(), "{name} H2*");
        assert_eq!(a.h5.word(), b.h5.word(), "{name} H5");
        assert_eq!(a.h5_star.word(), b.h5_star.word(), "{name} H5*");
        assert_eq!(a.verdict.kind, b.verdict.kind, "{name} verdict");
    }
}

#[test]
fn additive_birth_dominance_with_bounded_beta_implies_ratio_form() {
    let grid = default_grid();
    let opts = CheckOptions::default();
    for name in models::BUILTIN_NAMES {
        let fx = models::builtin(name).unwrap();
        let rep = analyze(&fx.spec, &grid, &opts).unwrap();
        if rep.h5.is_certified() && rep.flags.beta_bounded_above.value {
            assert!(
                rep.h5_star.is_certified(),
                "{name}: H5 certified with bounded beta but H5* is {}",
                rep.h5_star.word()
            );
        }
    }
}

#[test]
fn lower_system_never_overtakes_the_full_system() {
    let sys = models::two_patch_nicholson().spec;
    let opts = IntegrateOptions::with_step(0.02);
    for init in [
        InitialSegment::Constant(vec![1.0, 1.0]),
        InitialSegment::Constant(vec![2.5, 0.4]),
        InitialSegment::Constant(vec![0.1, 0.1]),
    ] {
        let v = comparison_check(&sys, 0.05, 3.0, &init, 60.0, &opts).unwrap();
        assert!(v <= 1e-6, "violation {v}");
    }
    // equality case: a system already of clamped form is its own lower
    // companion up to integrator tolerance
    let lower = sys.build_cooperative_lower(0.05, 3.0).unwrap();
    let v = comparison_check(
        &lower,
        0.05,
        3.0,
        &InitialSegment::Constant(vec![1.0, 1.0]),
        60.0,
        &opts,
    )
    .unwrap();
    assert!(v.abs() <= 1e-9, "self-comparison violation {v}");
}

#[test]
fn no_birth_lower_system_is_trivially_below() {
    // without birth terms the lower companion is the same linear system
    let fx = models::builtin("example3.1").unwrap();
    let lower = fx.spec.build_cooperative_lower(0.5, 3.0).unwrap();
    let opts = IntegrateOptions::with_step(2e-4);
    let a = integrate(&fx.spec, &fx.default_init, 10.0, &opts).unwrap();
    let b = integrate(&lower, &fx.default_init, 10.0, &opts).unwrap();
    for k in 0..=100 {
        let t = 10.0 * k as f64 / 100.0;
        let xa = a.value_at(t).unwrap();
        let xb = b.value_at(t).unwrap();
        for i in 0..2 {
            assert!(xb[i] - xa[i] <= 1e-12);
        }
    }
}

#[test]
fn permanence_floor_direction_matches_empirical_floors() {
    // when the permanence criterion fires with direction v, the empirical
    // per-component floors are a single multiple of v up to a factor of 10
    let fx = models::two_patch_nicholson();
    let rep = analyze(&fx.spec, &default_grid(), &CheckOptions::default()).unwrap();
    assert_eq!(rep.verdict.kind, VerdictKind::Permanent);
    let v = rep.verdict.floor_vector.clone().unwrap();
    let ens = make_ensemble(
        2,
        &EnsembleSpec {
            size: 20,
            lo: 1e-2,
            hi: 5.0,
            seed: 7,
        },
    );
    let est = estimate_permanence(&fx.spec, &ens, 120.0, 0.5, &IntegrateOptions::with_step(0.02));
    assert!(est.declared_positive);
    let ratios: Vec<f64> = est
        .m_hat_per_component
        .iter()
        .zip(&v)
        .map(|(m, vi)| m / vi)
        .collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
    assert!(hi / lo <= 10.0, "ratio spread {}", hi / lo);
}

#[test]
fn window_minima_grow_until_the_clamp_level() {
    // a lower-system trajectory started below m has nondecreasing window
    // minima until they first exceed m
    let sys = models::two_patch_nicholson().spec;
    let m = 0.5;
    let lower = sys.build_cooperative_lower(m, 3.0).unwrap();
    let traj = integrate(
        &lower,
        &InitialSegment::Constant(vec![0.2, 0.2]),
        40.0,
        &IntegrateOptions::with_step(0.05),
    )
    .unwrap();
    let s = window_minima_sequence(&traj, 0.0, sys.tau, 40).unwrap();
    let cross = s
        .iter()
        .position(|&v| v >= m)
        .expect("the sequence must exceed m");
    for w in s[..=cross].windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "decreasing step in {s:?}");
    }
    assert!(cross > 0, "starts below m");
}

#[test]
fn decaying_closed_form_is_not_reported_permanent() {
    // the scalar fixture with the flat-slope birth decays along its exact
    // solution; the ensemble estimate must not declare a positive floor
    let fx = models::builtin("example3.4").unwrap();
    let sol = fx.exact.as_ref().unwrap();
    let est = estimate_permanence(
        &fx.spec,
        &[sol.initial_segment()],
        200.0,
        0.5,
        &IntegrateOptions::with_step(0.01),
    );
    assert!(est.failures.is_empty());
    assert!(!est.declared_positive, "{est:?}");
}

#[test]
fn integration_is_deterministic() {
    let sys = models::two_patch_nicholson().spec;
    let opts = IntegrateOptions::with_step(0.05);
    let run = || {
        integrate(
            &sys,
            &InitialSegment::Constant(vec![1.0, 2.0]),
            50.0,
            &opts,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    for k in 0..=200 {
        let t = 50.0 * k as f64 / 200.0;
        let xa = a.value_at(t).unwrap();
        let xb = b.value_at(t).unwrap();
        for i in 0..2 {
            assert_eq!(xa[i].to_bits(), xb[i].to_bits());
        }
    }
}
