//! μ-continuation: solve the regularized problems for a decreasing list of
//! μ and compare the results against each other and the unregularized
//! integrand.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{solve_lenient, Problem, SolveConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{quadrant_gradient, Gridded, ScalarField, TimeSeries};
use crate::lagrangian::{ExtReal, LagrangianSpec};

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    /// max |z| over cells, quadrants and steps (Euclidean).
    pub max_dual_norm: f64,
    /// max f*(x, z_μ) for the unregularized integrand.
    pub fstar_violation: ExtReal,
    /// min and max over frames of ∫f_μ(∇u) − ∫f(∇u).
    pub mu_gap_min: f64,
    pub mu_gap_max: f64,
    /// μ|Ω|, the upper limit for the gap.
    pub mu_gap_bound: f64,
    pub max_step_gap: f64,
    pub max_el_residual: f64,
    pub failed_steps: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// ‖u_{μ_i} − u_{μ_{i+1}}‖ in L²(Ω_T), consecutive pairs.
    pub distances: Vec<f64>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl SweepReport {
    pub fn distances_decreasing(&self) -> bool {
        self.distances.windows(2).all(|w| w[1] < w[0])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mu,max_dual_norm,fstar_violation,mu_gap_min,mu_gap_max,mu_gap_bound,max_step_gap,max_el_residual,distance_to_next")?;
        for (i, r) in self.rows.iter().enumerate() {
            let d = self.distances.get(i).map_or(String::new(), |d| d.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.mu,
                r.max_dual_norm,
                r.fstar_violation,
                r.mu_gap_min,
                r.mu_gap_max,
                r.mu_gap_bound,
                r.max_step_gap,
                r.max_el_residual,
                d
            )?;
        }
        Ok(())
    }
}

/// ∫ f_μ(∇u) − ∫ f(∇u), summed per quadrant in the cancellation-free form
/// μ²/(f_μ + f) where both integrands share the norm.
pub fn mu_gap(spec: &LagrangianSpec, mu: f64, u: &ScalarField) -> f64 {
    let g = u.grid();
    let xi = quadrant_gradient(u);
    let base = spec.unregularized();
    let mut s = 0.0;
    for c in g.active_cells() {
        let p = base.at_cell(g, c);
        for q in 0..g.n_quadrants() {
            let x = xi.get(c, q);
            let f = p.eval(x);
            let fm = f.hypot(mu);
            if fm + f > 0.0 {
                s += mu * mu / (fm + f);
            }
        }
    }
    s * g.quadrant_weight()
}

fn l2_distance(a: &TimeSeries<ScalarField>, b: &TimeSeries<ScalarField>) -> Result<f64> {
    if a.times() != b.times() {
        return Err(Error::ShapeMismatch("sweep members have different stamps".into()));
    }
    let frames = a
        .frames()
        .iter()
        .zip(b.frames())
        .map(|(x, y)| x.zip_map(y, |p, q| p - q))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeSeries::new(a.times().to_vec(), frames)?.l2_space_time())
}

/// Solves `prob` once per μ (overriding `cfg.mu`). Steps that do not
/// converge are kept with their best iterate and listed in the row.
pub fn stability_sweep(prob: &Problem, mus: &[f64], cfg: &SolveConfig) -> Result<SweepReport> {
    if mus.is_empty() {
        return Err(Error::InvalidParam("mus must not be empty".into()));
    }
    if mus.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidParam("mus must be positive".into()));
    }
    if mus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParam("mus must be strictly decreasing".into()));
    }
    let runs = mus
        .par_iter()
        .map(|&mu| solve_lenient(prob, &SolveConfig { mu, ..cfg.clone() }))
        .collect::<Vec<_>>();
    let mut rows = Vec::with_capacity(mus.len());
    let mut trajectories = Vec::with_capacity(mus.len());
    let base = prob.spec.unregularized();
    let measure = prob.grid.domain_measure();
    for (&mu, run) in mus.iter().zip(runs) {
        let (traj, failed) = run?;
        let z = traj.z.as_ref().ok_or(Error::MissingDual)?;
        let g = traj.grid();
        let mut max_dual_norm: f64 = 0.0;
        let mut viol = ExtReal::Finite(f64::NEG_INFINITY);
        for frame in z.frames() {
            for c in g.active_cells() {
                let p = base.at_cell(g, c);
                for q in 0..g.n_quadrants() {
                    let zz = frame.get(c, q);
                    max_dual_norm = max_dual_norm.max(zz[0].hypot(zz[1]));
                    viol = viol.max(p.conjugate(zz));
                }
            }
        }
        let gaps: Vec<f64> = traj.u.frames().iter().map(|u| mu_gap(&prob.spec, mu, u)).collect();
        rows.push(SweepRow {
            mu,
            max_dual_norm,
            fstar_violation: viol,
            mu_gap_min: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            mu_gap_max: gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mu_gap_bound: mu * measure,
            max_step_gap: traj.stats.iter().map(|s| s.gap).fold(0.0, f64::max),
            max_el_residual: traj.stats.iter().map(|s| s.el_residual).fold(0.0, f64::max),
            failed_steps: failed,
        });
        trajectories.push(traj);
    }
    let distances = trajectories
        .windows(2)
        .map(|w| l2_distance(&w[0].u, &w[1].u))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { rows, distances, trajectories })
}
