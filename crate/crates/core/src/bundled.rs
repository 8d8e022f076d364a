//! Reference problems shared by the CLI configs, the tests and the
//! acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grid::{GridSpec, Gridded, ScalarField, TimeSeries};
use crate::lagrangian::LagrangianSpec;
use crate::solver::{solve, BoundaryData, Problem, SolveConfig, Trajectory};
use crate::Result;

/// Plateau of height 1 on [a, b] ⊂ (0, 1), zero Dirichlet data, TV.
pub fn plateau_1d(n: usize, a: f64, b: f64, horizon: f64) -> Result<Problem> {
    let grid = GridSpec::new_1d(n, 1.0 / n as f64, 0.0)?;
    let u0 = ScalarField::from_fn(&grid, |x| if x[0] > a && x[0] < b { 1.0 } else { 0.0 });
    let g = BoundaryData::constant(&grid, 0.0);
    Problem::new(grid, horizon, g, u0, LagrangianSpec::total_variation())
}

/// Exact TV flow u = (1−t)₊/|x| in the plane.
pub fn radial_solution(x: [f64; 2], t: f64) -> f64 {
    (1.0 - t).max(0.0) / x[0].hypot(x[1])
}

/// [-1, 1]² split into n×n cells, restricted to the cells whose centres lie
/// in the annulus r_in ≤ |x| ≤ r_out.
pub fn annulus_grid(n: usize, r_in: f64, r_out: f64) -> Result<GridSpec> {
    let h = 2.0 / n as f64;
    GridSpec::new_2d(n, n, h, [-1.0, -1.0])?.with_mask_fn(|x| {
        let r = x[0].hypot(x[1]);
        r >= r_in && r <= r_out
    })
}

/// TV flow on the annulus 0.5 ≤ |x| ≤ 1 with the exact radial solution as
/// data.
pub fn radial_annulus(n: usize, horizon: f64) -> Result<Problem> {
    let grid = annulus_grid(n, 0.5, 1.0)?;
    let u0 = ScalarField::from_fn(&grid, |x| radial_solution(x, 0.0));
    let g = BoundaryData::function(radial_solution);
    Problem::new(grid, horizon, g, u0, LagrangianSpec::total_variation())
}

/// Relative L² distance between `u` and the radial solution at time t.
pub fn radial_error(u: &ScalarField, t: f64) -> f64 {
    let exact = ScalarField::from_fn(u.grid(), |x| radial_solution(x, t));
    let diff = u.zip_map(&exact, |a, b| a - b).expect("same grid");
    diff.l2_norm() / exact.l2_norm()
}

/// Smooth bump on the unit square with zero boundary data.
pub fn bump_2d(n: usize, horizon: f64, spec: LagrangianSpec) -> Result<Problem> {
    let grid = GridSpec::unit(2, n)?;
    let u0 = ScalarField::from_fn(&grid, |x| {
        let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
        (-r2 / 0.02).exp()
    });
    let g = BoundaryData::constant(&grid, 0.0);
    Problem::new(grid, horizon, g, u0, spec)
}

/// Disk indicator of radius 1/4 on the unit square, zero boundary data.
pub fn disk_2d(n: usize, horizon: f64, spec: LagrangianSpec) -> Result<Problem> {
    let grid = GridSpec::unit(2, n)?;
    let u0 = ScalarField::from_fn(&grid, |x| {
        if (x[0] - 0.5).hypot(x[1] - 0.5) < 0.25 {
            1.0
        } else {
            0.0
        }
    });
    let g = BoundaryData::constant(&grid, 0.0);
    Problem::new(grid, horizon, g, u0, spec)
}

/// Step 1{x < 0.3 + 0.4t} on [0, 1], sampled at nt+1 equispaced stamps on [0, T].
pub fn moving_step_series(n: usize, nt: usize, horizon: f64) -> Result<TimeSeries<ScalarField>> {
    let grid = GridSpec::new_1d(n, 1.0 / n as f64, 0.0)?;
    let dt = horizon / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();
    let frames = times
        .iter()
        .map(|&t| ScalarField::from_fn(&grid, |x| if x[0] < 0.3 + 0.4 * t { 1.0 } else { 0.0 }))
        .collect();
    TimeSeries::new(times, frames)
}

/// The moving step plus a drift t·x/2, so the boundary values move too.
pub fn drifting_step_series(n: usize, nt: usize, horizon: f64) -> Result<TimeSeries<ScalarField>> {
    let step = moving_step_series(n, nt, horizon)?;
    let (times, frames) = step.into_parts();
    let frames = times
        .iter()
        .zip(frames)
        .map(|(&t, f)| {
            let drift = ScalarField::from_fn(f.grid(), |x| 0.5 * t * x[0]);
            f.zip_map(&drift, |a, b| a + b)
        })
        .collect::<Result<_>>()?;
    TimeSeries::new(times, frames)
}

/// Random piecewise-smooth 1D datum: a few bumps and jumps of random height
/// in [-1, 1], seeded.
pub fn random_profile_1d(grid: &GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let jumps: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.1..0.9), rng.gen_range(-1.0..1.0))).collect();
    let bumps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| (rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.2), rng.gen_range(-1.0..1.0)))
        .collect();
    ScalarField::from_fn(grid, |x| {
        let mut v = 0.0;
        for &(at, hgt) in &jumps {
            if x[0] > at {
                v += hgt / 3.0;
            }
        }
        for &(c, w, a) in &bumps {
            v += a * (-((x[0] - c) / w).powi(2)).exp() / 2.0;
        }
        v
    })
}

/// Seeded random 1D TV problem with constant boundary value, data scaled
/// by `amplitude`.
pub fn random_problem_1d(n: usize, horizon: f64, seed: u64, amplitude: f64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new_1d(n, 1.0 / n as f64, 0.0)?;
    let u0 = random_profile_1d(&grid, &mut rng).map(|v| amplitude * v);
    let g = BoundaryData::constant(&grid, amplitude * rng.gen_range(-0.5..0.5));
    Problem::new(grid, horizon, g, u0, LagrangianSpec::total_variation())
}

/// Solved trajectories of the random 1D problems with amplitude 10 on
/// [0, 0.4], seeds 0..count; shared by the local boundedness checks.
pub fn boundedness_battery(count: usize) -> Result<Vec<Trajectory>> {
    (0..count as u64)
        .into_par_iter()
        .map(|seed| solve(&random_problem_1d(200, 0.4, seed, 10.0)?, &SolveConfig::newton(0.02, 0.01)))
        .collect()
}

/// Two problems on the same grid with u0_a ≤ u0_b and g_a ≤ g_b.
pub fn ordered_pair_1d(n: usize, horizon: f64, seed: u64) -> Result<(Problem, Problem)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new_1d(n, 1.0 / n as f64, 0.0)?;
    let a = random_profile_1d(&grid, &mut rng);
    let gap = random_profile_1d(&grid, &mut rng).map(|v| v.abs());
    let b = a.zip_map(&gap, |x, y| x + y)?;
    let ga = rng.gen_range(-0.5..0.5);
    let gb = ga + rng.gen_range(0.0..0.5);
    let spec = LagrangianSpec::total_variation();
    Ok((
        Problem::new(grid.clone(), horizon, BoundaryData::constant(&grid, ga), a, spec.clone())?,
        Problem::new(grid.clone(), horizon, BoundaryData::constant(&grid, gb), b, spec)?,
    ))
}
