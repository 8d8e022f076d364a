use lgflow::bundled::{bump_2d, plateau_1d};
use lgflow::certify::*;
use lgflow::grid::{DualField, GridSpec, ScalarField, TimeSeries};
use lgflow::lagrangian::LagrangianSpec;
use lgflow::solver::*;
use lgflow::Error;

fn newton_plateau(n: usize) -> (Problem, Trajectory) {
    let prob = plateau_1d(n, 0.3, 0.7, 0.1).unwrap();
    let traj = solve(&prob, &SolveConfig::newton(0.01, 0.01)).unwrap();
    (prob, traj)
}

fn constant_run() -> (Problem, Trajectory) {
    let grid = GridSpec::unit(2, 10).unwrap();
    let u0 = ScalarField::constant(&grid, 0.4);
    let prob = Problem::new(grid.clone(), 0.1, BoundaryData::constant(&grid, 0.4), u0, LagrangianSpec::total_variation())
        .unwrap();
    let traj = solve(&prob, &SolveConfig::primal_dual(0.01, 1e-6)).unwrap();
    (prob, traj)
}

fn with_frames(traj: &Trajectory, u: Vec<ScalarField>, z: Option<Vec<DualField>>) -> Trajectory {
    let t = traj.u.times().to_vec();
    let u = TimeSeries::new(t.clone(), u).unwrap();
    let z = z.map(|z| TimeSeries::new(t[1..].to_vec(), z).unwrap());
    Trajectory::new(u, z, traj.stats.clone(), traj.spec.clone(), traj.tau).unwrap()
}

fn newton_cfg() -> CertifyConfig {
    CertifyConfig::for_method(InnerMethod::Newton)
}

#[test]
fn family_vanishes_at_ends_and_is_reproducible() {
    let grid = GridSpec::unit(2, 16).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 0.01 * k as f64).collect();
    let fam = TestFunctionFamily { count: 12, seed: 7, ..Default::default() };
    let phis = fam.generate(&grid, &times);
    assert!(phis.len() > 12);
    for p in &phis {
        assert_eq!(p.frames.len(), times.len());
        for k in [0, times.len() - 1] {
            assert!(p.frames[k].values().iter().all(|&v| v == 0.0), "{}", p.id);
        }
        assert!(p.frames.iter().flat_map(|f| f.values()).all(|v| v.is_finite()));
        assert!(p.sup() > 0.0);
    }
    let again = fam.generate(&grid, &times);
    assert!(phis.iter().zip(&again).all(|(a, b)| a.id == b.id && a.frames == b.frames));
    let other = TestFunctionFamily { seed: 8, ..fam.clone() }.generate(&grid, &times);
    assert!(phis.iter().zip(&other).any(|(a, b)| a.frames != b.frames));

    let canonical = TestFunctionFamily { count: 0, ..Default::default() }.generate(&grid, &times);
    assert!(!canonical.is_empty());
    assert!(canonical.iter().all(|p| p.id.starts_with(CANONICAL_VERSION)));
    assert!(canonical.iter().any(|p| p.interior) && canonical.iter().any(|p| !p.interior));
}

#[test]
fn test_function_needs_compact_time_support() {
    let grid = GridSpec::new_1d(8, 0.125, 0.0).unwrap();
    let z = ScalarField::zeros(&grid);
    let one = ScalarField::constant(&grid, 1.0);
    assert!(TestFunction::new("ok", vec![z.clone(), one.clone(), z.clone()]).is_ok());
    assert!(matches!(
        TestFunction::new("bad", vec![one.clone(), one.clone(), z.clone()]),
        Err(Error::InvalidTestFunction(_))
    ));
    assert!(TestFunction::new("short", vec![z.clone(), z]).is_err());
    let p = TestFunction::new("ok", vec![ScalarField::zeros(&grid), one, ScalarField::zeros(&grid)]).unwrap();
    assert!(!p.interior);
}

#[test]
fn newton_trajectory_certifies() {
    let (prob, traj) = newton_plateau(100);
    let rep = certify(&traj, &prob, &newton_cfg()).unwrap();
    assert!(rep.pass, "{}", rep.to_json());
    assert!(rep.get("subgradient").unwrap().residual <= 1e-8);
    assert!(rep.get("euler_lagrange").is_some());
    assert_eq!(rep.pass, rep.conditions.iter().all(|c| c.residual <= c.tol));
    let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(v["canonical_set"], CANONICAL_VERSION);
}

#[test]
fn primal_dual_subgradient_within_ten_tol() {
    let prob = plateau_1d(100, 0.3, 0.7, 0.05).unwrap();
    let tol_rel = 1e-5;
    let traj = solve(&prob, &SolveConfig::primal_dual(0.01, tol_rel)).unwrap();
    let r = check_subgradient(&traj, &prob, &CertifyConfig::for_method(InnerMethod::PrimalDual)).unwrap();
    assert!(r.residual <= 10.0 * tol_rel, "{}", r.residual);
    // no Euler–Lagrange check without a differentiable integrand
    let rep = certify(&traj, &prob, &CertifyConfig::for_method(InnerMethod::PrimalDual)).unwrap();
    assert!(rep.get("euler_lagrange").is_none());
}

#[test]
fn inflated_dual_is_infeasible() {
    let (prob, traj) = newton_plateau(50);
    let z: Vec<DualField> = traj.z.as_ref().unwrap().frames().iter().map(|z| z.scale(1.5)).collect();
    let bad = with_frames(&traj, traj.u.frames().to_vec(), Some(z));
    let r = check_subgradient(&bad, &prob, &newton_cfg()).unwrap();
    assert_eq!(r.residual, f64::INFINITY);
    assert!(!r.pass);
    let json = certify(&bad, &prob, &newton_cfg()).unwrap().to_json();
    assert!(json.contains("\"inf\""));
}

#[test]
fn missing_dual_is_an_error() {
    let (prob, traj) = newton_plateau(50);
    let bare = with_frames(&traj, traj.u.frames().to_vec(), None);
    assert!(matches!(check_subgradient(&bare, &prob, &newton_cfg()), Err(Error::MissingDual)));
}

#[test]
fn zero_test_function_gives_zero() {
    let (prob, traj) = newton_plateau(50);
    let zeros = vec![ScalarField::zeros(traj.grid()); traj.u.len()];
    let phi = TestFunction::new("zero", zeros).unwrap();
    let cfg = newton_cfg();
    for r in [
        check_divergence_condition(&traj, &prob, &[phi.clone()], &cfg).unwrap(),
        check_pairing_condition(&traj, &prob, &[phi.clone()], &cfg).unwrap(),
        check_euler_lagrange(&traj, &prob, &[phi], &cfg).unwrap(),
    ] {
        assert!(r.residual.abs() < 1e-15, "{}: {}", r.condition, r.residual);
    }
}

#[test]
fn constant_run_has_vanishing_residuals() {
    let (prob, traj) = constant_run();
    let cfg = CertifyConfig::for_method(InnerMethod::PrimalDual);
    let phis = cfg.family.generate(traj.grid(), traj.u.times());
    let interior: Vec<_> = phis.iter().filter(|p| p.interior).cloned().collect();
    assert!(check_pairing_condition(&traj, &prob, &interior, &cfg).unwrap().residual.abs() < 1e-9);
    assert!(check_divergence_condition(&traj, &prob, &phis, &cfg).unwrap().residual <= 1e-9);
    let init = check_initial_condition(&traj, &prob, &cfg).unwrap();
    assert!(init.curve.unwrap().iter().all(|&r| r.abs() < 1e-12));
    let rep = certify(&traj, &prob, &cfg).unwrap();
    assert!(rep.pass, "{}", rep.to_json());
}

#[test]
fn divergence_condition_holds_for_both_signs() {
    let (prob, traj) = newton_plateau(100);
    let cfg = newton_cfg();
    let phis: Vec<TestFunction> = cfg.family.generate(traj.grid(), traj.u.times()).into_iter().filter(|p| p.interior).collect();
    let neg: Vec<TestFunction> = phis
        .iter()
        .map(|p| TestFunction::new(format!("{}/neg", p.id), p.frames.iter().map(|f| f.map(|v| -v)).collect()).unwrap())
        .collect();
    let a = check_divergence_condition(&traj, &prob, &phis, &cfg).unwrap();
    let b = check_divergence_condition(&traj, &prob, &neg, &cfg).unwrap();
    assert!(a.pass && b.pass, "{} {}", a.residual, b.residual);
}

#[test]
fn corrupted_first_frame_breaks_initial_condition() {
    // T/32 must exceed τ for the check to see any frame
    let prob = plateau_1d(100, 0.3, 0.7, 0.64).unwrap();
    let traj = solve(&prob, &SolveConfig::newton(0.01, 0.01)).unwrap();
    let cfg = newton_cfg();
    let mut u = traj.u.frames().to_vec();
    for f in u.iter_mut().skip(1).take(4) {
        *f = f.map(|v| v + 0.5);
    }
    let bad = with_frames(&traj, u, traj.z.as_ref().map(|z| z.frames().to_vec()));
    let good = check_initial_condition(&traj, &prob, &cfg).unwrap();
    let r = check_initial_condition(&bad, &prob, &cfg).unwrap();
    assert!(good.pass);
    assert!(!r.pass && r.residual > 10.0 * good.residual.max(cfg.tol_init), "{}", r.residual);
}

fn pairing_residual(traj: &Trajectory, prob: &Problem) -> (f64, bool) {
    let mut cfg = newton_cfg();
    cfg.family.count = 0;
    let phis: Vec<_> = cfg.family.generate(traj.grid(), traj.u.times()).into_iter().filter(|p| p.interior).collect();
    let r = check_pairing_condition(traj, prob, &phis, &cfg).unwrap();
    (r.residual, r.pass)
}

#[test]
fn pairing_refines_and_detects_corruption() {
    let run = |n: usize, tau: f64| {
        let prob = bump_2d(n, 0.1, LagrangianSpec::total_variation()).unwrap();
        let traj = solve(&prob, &SolveConfig::newton(tau, 0.05)).unwrap();
        (prob, traj)
    };
    let (p1, t1) = run(32, 0.01);
    let (p2, t2) = run(64, 0.005);
    let ((r1, _), (r2, pass2)) = (pairing_residual(&t1, &p1), pairing_residual(&t2, &p2));
    let order = (r1 / r2).log2();
    assert!(order >= 0.8 && pass2, "residuals {r1} {r2}, order {order}");

    // the same bump, growing linearly in time, added to u but not to z
    let corrupt = |prob: &Problem, traj: &Trajectory| {
        let bump = ScalarField::from_fn(traj.grid(), |x| (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
        let t = traj.u.times();
        let horizon = t[t.len() - 1];
        let u = traj
            .u
            .frames()
            .iter()
            .zip(t)
            .map(|(f, &s)| f.zip_map(&bump, |a, b| a + b * s / horizon).unwrap())
            .collect();
        pairing_residual(&with_frames(traj, u, traj.z.as_ref().map(|z| z.frames().to_vec())), prob)
    };
    let ((c1, _), (c2, cpass2)) = (corrupt(&p1, &t1), corrupt(&p2, &t2));
    assert!(c1 > 5.0 * r1 && c2 > 5.0 * r2, "{c1} {c2} vs {r1} {r2}");
    assert!(c2 > 0.5 * c1 && !cpass2, "{c1} {c2}");
}

#[test]
fn variational_and_intermediate_with_constants() {
    let (prob, traj) = newton_plateau(100);
    let cfg = newton_cfg();
    let t = traj.u.times().to_vec();
    let maps: Vec<ComparisonMap> = [-0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|&c| ComparisonMap {
            id: format!("c{c}"),
            v: TimeSeries::new(t.clone(), vec![ScalarField::constant(traj.grid(), c); t.len()]).unwrap(),
        })
        .collect();
    let vi = check_variational_inequality(&traj, &prob, &maps, &cfg).unwrap();
    let im = check_intermediate_condition(&traj, &prob, &maps, &cfg).unwrap();
    assert!(vi.pass && im.pass, "{} {}", vi.residual, im.residual);
    assert!(vi.note.unwrap().contains("no counterexample"));
    let battery = comparison_battery(&traj, &prob, &cfg.family.generate(traj.grid(), &t)).unwrap();
    assert!(battery.len() >= 4);
    assert!(check_variational_inequality(&traj, &prob, &battery, &cfg).unwrap().pass);
}

#[test]
fn comparison_curves() {
    let prob = plateau_1d(80, 0.3, 0.7, 0.05).unwrap();
    let cfg = SolveConfig::newton(0.01, 0.01);
    let a = solve(&prob, &cfg).unwrap();
    let same = check_comparison(&a, &a, 0.0).unwrap();
    assert!(same.pass && same.curve.unwrap().iter().all(|&v| v == 0.0));

    let lower = Problem { u0: prob.u0.map(|v| v - 1.0), ..prob.clone() };
    let b = solve(&lower, &cfg).unwrap();
    let r = check_comparison(&b, &a, 1e-10).unwrap();
    assert!(r.pass && r.curve.unwrap().iter().all(|&v| v == 0.0));
    // the reverse order starts positive and must not grow
    let rev = check_comparison(&a, &b, 1e-8).unwrap();
    let curve = rev.curve.clone().unwrap();
    assert!(curve[0] > 0.0 && rev.pass, "{curve:?}");

    let other = solve(&plateau_1d(40, 0.3, 0.7, 0.05).unwrap(), &cfg).unwrap();
    assert!(matches!(check_comparison(&a, &other, 1e-8), Err(Error::GridMismatch)));
}

#[test]
fn euler_lagrange_rejects_attached_trace() {
    let (prob, traj) = newton_plateau(60);
    let cfg = newton_cfg();
    let boundary: Vec<_> =
        cfg.family.generate(traj.grid(), traj.u.times()).into_iter().filter(|p| !p.interior).collect();
    assert!(!boundary.is_empty());
    // zero data and a plateau away from the ends: the trace stays attached
    assert!(matches!(
        check_euler_lagrange(&traj, &prob, &boundary, &cfg),
        Err(Error::InvalidTestFunction(_))
    ));
    let restricted: Vec<_> = boundary.iter().map(|p| p.restricted(&traj, &prob)).collect();
    assert!(check_euler_lagrange(&traj, &prob, &restricted, &cfg).unwrap().pass);
}

#[test]
fn scale_and_sign() {
    let (prob, traj) = constant_run();
    let s = problem_scale(&traj, &prob);
    assert!(s > 1.0);
    assert_eq!((sign0(-2.0), sign0(0.0), sign0(3.0)), (-1.0, 0.0, 1.0));
}
