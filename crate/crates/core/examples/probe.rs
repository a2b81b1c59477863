use std::time::Instant;

use dde_permanence::experiments::*;
use dde_permanence::hypotheses::{analyze, CheckOptions, GridSpec};
use dde_permanence::integrator::{integrate, InitialSegment, IntegrateOptions};
use dde_permanence::models;

fn main() {
    // desk certificates
    let grid = GridSpec::new(10.0, 1e4, 400);
    let desk = models::two_patch_nicholson();
    let rep = analyze(&desk.spec, &grid, &CheckOptions::default()).unwrap();
    println!("desk H2 = {:?}", rep.h2.witness().map(|w| w.margin));
    println!("desk H5 = {:?}", rep.h5.witness().map(|w| w.margin));
    println!("desk H2* = {:?}", rep.h2_star.witness().map(|w| w.margin));
    println!("desk H5* = {:?}", rep.h5_star.witness().map(|w| w.margin));

    // trajectory tracking for the two closed-form fixtures
    for name in ["example3.4", "example3.5"] {
        let fx = models::builtin(name).unwrap();
        let sol = fx.exact.as_ref().unwrap();
        let t0 = Instant::now();
        let traj = integrate(
            &fx.spec,
            &sol.initial_segment(),
            100.0,
            &IntegrateOptions::with_step(1e-3),
        )
        .unwrap();
        let mut worst = 0.0f64;
        for k in 0..=1000 {
            let t = 100.0 * k as f64 / 1000.0;
            let x = traj.value_at(t).unwrap();
            for i in 0..fx.spec.n {
                let want = sol.value(i, t).unwrap();
                worst = worst.max(((x[i] - want) / want).abs());
            }
        }
        println!("{name}: rel err {worst:.3e} in {:?}", t0.elapsed());
    }

    // comparison check on the desk instance
    let t0 = Instant::now();
    let v = comparison_check(
        &desk.spec,
        0.5,
        3.0,
        &InitialSegment::Constant(vec![1.0, 1.0]),
        100.0,
        &IntegrateOptions::with_step(0.01),
    )
    .unwrap();
    println!("comparison violation {v:.3e} in {:?}", t0.elapsed());

    // ensemble estimate
    let t0 = Instant::now();
    let ens = make_ensemble(2, &EnsembleSpec { size: 50, lo: 1e-3, hi: 5.0, seed: 2024 });
    let est = estimate_permanence(&desk.spec, &ens, 200.0, 0.5, &IntegrateOptions::with_step(0.02));
    println!(
        "desk ensemble m = {:.4}, M = {:.4}, positive = {}, fails = {} in {:?}",
        est.m_hat,
        est.upper_hat,
        est.declared_positive,
        est.failures.len(),
        t0.elapsed()
    );

    // stable comparator decay rate
    let t0 = Instant::now();
    let stable = models::constant_linear_pair(2.0, 1.0, 0.5);
    let traj = integrate(
        &stable,
        &InitialSegment::Constant(vec![1.0, 1.0]),
        200.0,
        &IntegrateOptions::with_step(1e-3),
    )
    .unwrap();
    let fit = decay_rate_fit(&traj, 20.0, 180.0).unwrap();
    println!("stable pair rate {:.4} (r2 {:.6}) in {:?}", fit.rate, fit.r_squared, t0.elapsed());

    // chained run on the growing-coefficient pair, short horizon first
    let fx = models::builtin("example3.1").unwrap();
    let t0 = Instant::now();
    let run = chained_integrate(
        &fx.spec,
        &fx.default_init,
        100.0,
        1e-3,
        2.5,
        0.5,
        Some(0.0),
    )
    .unwrap();
    println!(
        "chained to t=100: {} steps, {} segments, x(100) = {:?} (phi = {:.6}) in {:?}",
        run.total_steps,
        run.segments,
        run.final_state,
        1.0 + 1.0 / 102.0,
        t0.elapsed()
    );
}
