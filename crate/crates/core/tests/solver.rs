use lgflow::bundled::{bump_2d, ordered_pair_1d, plateau_1d};
use lgflow::grid::{trace, BoundaryTrace, GridSpec, ScalarField};
use lgflow::lagrangian::LagrangianSpec;
use lgflow::solver::*;
use lgflow::Error;

fn constant_problem(grid: GridSpec, c: f64, spec: LagrangianSpec) -> Problem {
    let u0 = ScalarField::constant(&grid, c);
    Problem::new(grid.clone(), 0.05, BoundaryData::constant(&grid, c), u0, spec).unwrap()
}

#[test]
fn constants_are_stationary() {
    let g2 = GridSpec::unit(2, 12).unwrap();
    let cases = [
        (GridSpec::new_1d(30, 1.0 / 30.0, 0.0).unwrap(), SolveConfig::newton(0.01, 0.05)),
        (g2.clone(), SolveConfig::newton(0.01, 0.05)),
        (g2, SolveConfig::primal_dual(0.01, 1e-6)),
    ];
    for (grid, cfg) in cases {
        let prob = constant_problem(grid, 0.8, LagrangianSpec::total_variation());
        let traj = solve(&prob, &cfg).unwrap();
        assert_eq!(traj.steps(), 5);
        for f in traj.u.frames() {
            assert!(f.values().iter().all(|&v| (v - 0.8).abs() < 1e-9), "{:?}", cfg.method);
        }
    }
}

#[test]
fn single_constant_step() {
    let grid = GridSpec::unit(2, 8).unwrap();
    let u = ScalarField::constant(&grid, -1.0);
    let g = BoundaryTrace::constant(&grid, -1.0);
    let spec = LagrangianSpec::area();
    let out = step(&u, &g, &spec, &SolveConfig::newton(0.1, 0.0)).unwrap();
    assert!(out.u.values().iter().all(|&v| (v + 1.0).abs() < 1e-12));
    // only the f(x, 0) terms remain
    assert!((out.stat.energy - 1.0).abs() < 1e-12);
}

/// min over c of 2c + W(1 − c)²/(2τ) by ternary search.
fn plateau_oracle(w: f64, tau: f64) -> f64 {
    let e = |c: f64| 2.0 * c + w * (1.0 - c) * (1.0 - c) / (2.0 * tau);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if e(m1) < e(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn plateau_drops_by_two_tau_over_width() {
    let (a, b, tau) = (0.3, 0.7, 0.01);
    let prob = plateau_1d(200, a, b, tau).unwrap();
    let out = step(&prob.u0, &prob.g_at(tau), &prob.spec, &SolveConfig::primal_dual(tau, 1e-7)).unwrap();
    let mid = out.u.value_at_point(&[0.5]);
    let expect = plateau_oracle(b - a, tau);
    assert!((expect - (1.0 - 2.0 * tau / (b - a))).abs() < 1e-6);
    assert!((mid - expect).abs() < 1e-4, "{mid} vs {expect}");
    assert!(out.u.value_at_point(&[0.1]).abs() < 1e-6);
}

#[test]
fn energy_decreases_with_fixed_data() {
    for (prob, cfg) in [
        (plateau_1d(100, 0.2, 0.6, 0.1).unwrap(), SolveConfig::newton(0.01, 0.01)),
        (bump_2d(16, 0.1, LagrangianSpec::total_variation()).unwrap(), SolveConfig::newton(0.02, 0.05)),
        (bump_2d(16, 0.1, LagrangianSpec::area()).unwrap(), SolveConfig::primal_dual(0.02, 1e-5)),
    ] {
        let traj = solve(&prob, &cfg).unwrap();
        for w in traj.stats.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-9, "{:?}", traj.stats);
            assert!(w[1].objective <= w[0].energy + 1e-9);
            assert!(w[1].converged);
        }
    }
}

#[test]
fn ordered_data_give_ordered_trajectories() {
    for seed in 0..3 {
        let (pa, pb) = ordered_pair_1d(100, 0.1, seed).unwrap();
        let cfg = SolveConfig::newton(0.01, 0.01);
        let (ta, tb) = (solve(&pa, &cfg).unwrap(), solve(&pb, &cfg).unwrap());
        for (u, v) in ta.u.frames().iter().zip(tb.u.frames()) {
            let worst = u.values().iter().zip(v.values()).map(|(a, b)| a - b).fold(f64::MIN, f64::max);
            assert!(worst <= 1e-8, "seed {seed}: {worst}");
        }
    }
}

#[test]
fn trajectory_shape() {
    let prob = plateau_1d(50, 0.3, 0.7, 0.095).unwrap();
    let traj = solve(&prob, &SolveConfig::newton(0.01, 0.01)).unwrap();
    // ⌈T/τ⌉ steps, stamps at kτ
    assert_eq!(traj.steps(), 10);
    assert_eq!(traj.u.len(), 11);
    assert_eq!(traj.z.as_ref().unwrap().len(), 10);
    assert!((traj.u.times()[10] - 0.1).abs() < 1e-15);
    let mut buf = Vec::new();
    traj.write_index_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 12);
    assert_eq!(trace(traj.final_frame()).values().len(), 2);
}

#[test]
fn config_validation() {
    let grid = GridSpec::unit(2, 8).unwrap();
    let tv = LagrangianSpec::total_variation();
    let bad = [
        SolveConfig { tau: 0.0, ..SolveConfig::default() },
        SolveConfig { mu: -1.0, ..SolveConfig::default() },
        SolveConfig { theta_pd: 1.5, ..SolveConfig::default() },
        SolveConfig { sigma: Some(1.0), tau_pd: Some(1.0), ..SolveConfig::default() },
        SolveConfig::newton(0.01, 0.0),
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(&grid, &tv), Err(Error::InvalidConfig(_))), "{cfg:?}");
    }
    assert!(SolveConfig::newton(0.01, 0.0).validate(&grid, &LagrangianSpec::area()).is_ok());
    let (s, t) = SolveConfig::default().step_sizes(&grid);
    let l = grid.gradient_norm_bound();
    assert!(s * t * l * l <= 1.0 + 1e-12);
}

#[test]
fn problem_validation() {
    let grid = GridSpec::unit(2, 4).unwrap();
    let u0 = ScalarField::zeros(&grid);
    let g = BoundaryData::constant(&grid, 0.0);
    let tv = LagrangianSpec::total_variation();
    assert!(Problem::new(grid.clone(), 0.0, g.clone(), u0.clone(), tv).is_err());
    let aniso = LagrangianSpec::anisotropic_tv(vec![1.0]).unwrap();
    assert!(Problem::new(grid, 0.1, g, u0, aniso).is_err());
}

#[test]
fn non_convergence_carries_best_iterate() {
    let prob = plateau_1d(50, 0.3, 0.7, 0.02).unwrap();
    let cfg = SolveConfig { max_iters: 2, check_every: 1, tol_rel: 1e-12, ..SolveConfig::primal_dual(0.01, 1e-12) };
    match solve(&prob, &cfg) {
        Err(Error::NonConvergence { step, best, .. }) => {
            assert_eq!(step, 1);
            assert!(!best.stat.converged);
            assert_eq!(best.u.values().len(), 50);
        }
        other => panic!("expected non-convergence, got {:?}", other.map(|t| t.steps())),
    }
    let (traj, failed) = solve_lenient(&prob, &cfg).unwrap();
    assert_eq!(failed, vec![1, 2]);
    assert_eq!(traj.steps(), 2);
}

#[test]
fn mu_sweep_properties() {
    let prob = plateau_1d(100, 0.3, 0.7, 0.1).unwrap();
    let mus = [0.1, 0.05, 0.025];
    let rep = stability_sweep(&prob, &mus, &SolveConfig::newton(0.01, 0.1)).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert_eq!(rep.distances.len(), 2);
    assert!(rep.distances_decreasing(), "{:?}", rep.distances);
    for r in &rep.rows {
        assert!(r.max_dual_norm <= 1.0 + 1e-8);
        assert!(r.fstar_violation.is_finite() && r.fstar_violation.to_f64() <= 1e-8);
        assert!(r.mu_gap_min >= 0.0 && r.mu_gap_max <= r.mu_gap_bound);
        assert_eq!(r.mu_gap_bound, r.mu * prob.grid.domain_measure());
        assert!(r.failed_steps.is_empty());
    }
    assert!(stability_sweep(&prob, &[0.05, 0.1], &SolveConfig::newton(0.01, 0.1)).is_err());
}

#[test]
fn mu_gap_bounds_per_field() {
    let grid = GridSpec::unit(2, 10).unwrap();
    let u = ScalarField::from_fn(&grid, |x| (5.0 * x[0]).sin() * x[1]);
    let tv = LagrangianSpec::total_variation();
    for mu in [1.0, 0.1, 1e-3] {
        let gap = mu_gap(&tv, mu, &u);
        assert!(gap >= 0.0 && gap <= mu * grid.domain_measure());
    }
    assert!((mu_gap(&tv, 0.5, &ScalarField::zeros(&grid)) - 0.5).abs() < 1e-15);
}
