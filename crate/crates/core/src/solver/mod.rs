//! Minimizing movements: each step minimizes
//! E(v) = ∫ f_μ(∇v) + Σ_b h^(n-1)|Tv − g_k| f^∞(ν) + (1/2τ)‖v − u_{k−1}‖²
//! with a primal–dual inner solver (any μ) or Newton–CG (smooth integrands).

mod newton;
mod primal_dual;
mod sweep;

pub use sweep::{mu_gap, stability_sweep, SweepReport, SweepRow};

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    boundary_weights, trace, BoundaryTrace, DualField, GridSpec, Gridded, ScalarField, TimeSeries,
};
use crate::lagrangian::{LagrangianSpec, PointIntegrand};

/// Boundary values |Tv − g| within this band (times the step scale) count as attained.
pub const TRACE_TIE: f64 = 1e-9;

pub type BoundaryFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// Dirichlet data g.
#[derive(Clone)]
pub enum BoundaryData {
    /// Time-independent boundary values.
    Static(BoundaryTrace),
    /// Boundary values at stamps, linear in between.
    Traces(TimeSeries<BoundaryTrace>),
    /// Full fields at stamps; traces are taken.
    Fields(TimeSeries<ScalarField>),
    /// g(x, t) evaluated at boundary face centres.
    Function(BoundaryFn),
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryData::Static(_) => write!(f, "BoundaryData::Static"),
            BoundaryData::Traces(s) => write!(f, "BoundaryData::Traces({} stamps)", s.len()),
            BoundaryData::Fields(s) => write!(f, "BoundaryData::Fields({} stamps)", s.len()),
            BoundaryData::Function(_) => write!(f, "BoundaryData::Function"),
        }
    }
}

fn bracket(times: &[f64], t: f64) -> (usize, usize, f64) {
    if t <= times[0] {
        return (0, 0, 0.0);
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return (last, last, 0.0);
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    (k, k + 1, w)
}

impl BoundaryData {
    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        BoundaryData::Static(BoundaryTrace::constant(grid, c))
    }

    pub fn function(f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryData::Function(Arc::new(f))
    }

    /// Boundary values at time t on `grid`.
    pub fn at(&self, grid: &GridSpec, t: f64) -> BoundaryTrace {
        match self {
            BoundaryData::Static(tr) => tr.clone(),
            BoundaryData::Traces(ts) => {
                let (a, b, w) = bracket(ts.times(), t);
                let (va, vb) = (ts.frame(a).values(), ts.frame(b).values());
                let v = va.iter().zip(vb).map(|(x, y)| (1.0 - w) * x + w * y).collect();
                BoundaryTrace::new(grid.clone(), v).expect("interpolated finite values")
            }
            BoundaryData::Fields(_) => trace(&self.extension(grid, t).unwrap()),
            BoundaryData::Function(f) => BoundaryTrace::from_fn(grid, |x| f(x, t)),
        }
    }

    /// A field whose trace is g(t), when one is available.
    pub fn extension(&self, grid: &GridSpec, t: f64) -> Option<ScalarField> {
        match self {
            BoundaryData::Fields(ts) => {
                let (a, b, w) = bracket(ts.times(), t);
                let f = ts
                    .frame(a)
                    .zip_map(ts.frame(b), |x, y| (1.0 - w) * x + w * y)
                    .expect("frames share a grid");
                Some(f)
            }
            BoundaryData::Function(f) => Some(ScalarField::from_fn(grid, |x| f(x, t))),
            _ => None,
        }
    }

    fn validate(&self, grid: &GridSpec, horizon: f64) -> Result<()> {
        let covers = |times: &[f64]| times[0] <= 1e-12 && *times.last().unwrap() >= horizon - 1e-12;
        match self {
            BoundaryData::Static(tr) if tr.grid() != grid => Err(Error::GridMismatch),
            BoundaryData::Traces(ts) if ts.grid() != grid => Err(Error::GridMismatch),
            BoundaryData::Fields(ts) if ts.grid() != grid => Err(Error::GridMismatch),
            BoundaryData::Traces(ts) if !covers(ts.times()) => {
                Err(Error::InvalidParam("g stamps must cover [0, T]".into()))
            }
            BoundaryData::Fields(ts) if !covers(ts.times()) => {
                Err(Error::InvalidParam("g stamps must cover [0, T]".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: GridSpec,
    pub horizon: f64,
    pub g: BoundaryData,
    pub u0: ScalarField,
    pub spec: LagrangianSpec,
}

impl Problem {
    pub fn new(
        grid: GridSpec,
        horizon: f64,
        g: BoundaryData,
        u0: ScalarField,
        spec: LagrangianSpec,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParam(format!("horizon must be positive, got {horizon}")));
        }
        let u0 = if u0.grid() == &grid { u0 } else { u0.on_grid(&grid)? };
        if let Some(d) = spec.required_dim() {
            if d != grid.dim() {
                return Err(Error::InvalidParam(format!(
                    "integrand is {d}-dimensional, grid is {}-dimensional",
                    grid.dim()
                )));
            }
        }
        g.validate(&grid, horizon)?;
        Ok(Problem { grid, horizon, g, u0, spec })
    }

    pub fn g_at(&self, t: f64) -> BoundaryTrace {
        self.g.at(&self.grid, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    PrimalDual,
    Newton,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub tau: f64,
    pub mu: f64,
    pub method: InnerMethod,
    pub max_iters: usize,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub theta_pd: f64,
    pub sigma: Option<f64>,
    pub tau_pd: Option<f64>,
    /// Use the strong convexity of the step functional to adapt σ, τ_pd.
    pub accelerate: bool,
    /// Rebalance σ/τ_pd (product fixed) between the Fenchel gap and the
    /// Euler–Lagrange residual at each convergence check.
    pub adaptive: bool,
    /// Iterations between convergence checks of the primal–dual loop.
    pub check_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tau: 0.01,
            mu: 0.0,
            method: InnerMethod::PrimalDual,
            max_iters: 20_000,
            tol_rel: 1e-4,
            tol_abs: 1e-12,
            theta_pd: 1.0,
            sigma: None,
            tau_pd: None,
            accelerate: false,
            adaptive: true,
            check_every: 10,
        }
    }
}

impl SolveConfig {
    /// Newton preset. Below tol_rel ≈ 1e-9 the EL residual hits rounding
    /// noise once μ·h² is small.
    pub fn newton(tau: f64, mu: f64) -> Self {
        SolveConfig { tau, mu, method: InnerMethod::Newton, max_iters: 500, tol_rel: 1e-8, ..Default::default() }
    }

    pub fn primal_dual(tau: f64, tol_rel: f64) -> Self {
        SolveConfig { tau, tol_rel, ..Default::default() }
    }

    /// Primal and dual step sizes with σ·τ_pd·L² ≤ 1.
    pub fn step_sizes(&self, grid: &GridSpec) -> (f64, f64) {
        let l = grid.gradient_norm_bound();
        match (self.sigma, self.tau_pd) {
            (Some(s), Some(t)) => (s, t),
            (Some(s), None) => (s, 1.0 / (s * l * l)),
            (None, Some(t)) => (1.0 / (t * l * l), t),
            (None, None) => (10.0 / l, 0.1 / l),
        }
    }

    pub fn validate(&self, grid: &GridSpec, spec: &LagrangianSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return bad(format!("mu must be nonnegative, got {}", self.mu));
        }
        if !(self.tol_rel > 0.0) || !(self.tol_abs > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.theta_pd) {
            return bad(format!("theta_pd must lie in [0, 1], got {}", self.theta_pd));
        }
        if self.max_iters == 0 || self.check_every == 0 {
            return bad("max_iters and check_every must be at least 1".into());
        }
        let (s, t) = self.step_sizes(grid);
        let l = grid.gradient_norm_bound();
        if !(s > 0.0 && t > 0.0) || s * t * l * l > 1.0 + 1e-12 {
            return bad(format!("step sizes violate sigma*tau_pd*L^2 <= 1 (L = {l})"));
        }
        if self.method == InnerMethod::Newton && !self.effective_spec(spec)?.is_differentiable() {
            return bad("newton needs a smooth integrand (mu > 0 or area, isotropic)".into());
        }
        Ok(())
    }

    /// f_μ, or f itself when μ = 0.
    pub fn effective_spec(&self, spec: &LagrangianSpec) -> Result<LagrangianSpec> {
        if self.mu > 0.0 {
            spec.regularize(self.mu)
        } else {
            Ok(spec.clone())
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StepStat {
    pub k: usize,
    pub t: f64,
    /// ∫ f_μ(∇u_k) + boundary term.
    pub energy: f64,
    /// Step functional E at u_k.
    pub objective: f64,
    pub inner_iters: usize,
    /// Largest quadrant Fenchel gap.
    pub gap: f64,
    /// L² norm of the discrete Euler–Lagrange residual.
    pub el_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub u: ScalarField,
    pub z: DualField,
    pub stat: StepStat,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Frames at t_k = kτ, k = 0..K.
    pub u: TimeSeries<ScalarField>,
    /// Dual frames at t_1..t_K.
    pub z: Option<TimeSeries<DualField>>,
    pub stats: Vec<StepStat>,
    /// Integrand the steps were computed with (f_μ).
    pub spec: LagrangianSpec,
    pub tau: f64,
}

impl Trajectory {
    pub fn new(
        u: TimeSeries<ScalarField>,
        z: Option<TimeSeries<DualField>>,
        stats: Vec<StepStat>,
        spec: LagrangianSpec,
        tau: f64,
    ) -> Result<Self> {
        if let Some(z) = &z {
            if z.grid() != u.grid() {
                return Err(Error::GridMismatch);
            }
            if z.times() != &u.times()[1..] {
                return Err(Error::ShapeMismatch("dual frames must sit at t_1..t_K".into()));
            }
        }
        Ok(Trajectory { u, z, stats, spec, tau })
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }

    pub fn steps(&self) -> usize {
        self.u.len() - 1
    }

    pub fn final_frame(&self) -> &ScalarField {
        self.u.frame(self.u.len() - 1)
    }

    /// Index CSV with columns k, t, energy, inner_iters, gap.
    pub fn write_index_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,t,energy,inner_iters,gap")?;
        for s in &self.stats {
            writeln!(w, "{},{},{},{},{}", s.k, s.t, s.energy, s.inner_iters, s.gap)?;
        }
        Ok(())
    }
}

/// Per-step data shared by the inner solvers.
pub(crate) struct StepContext<'a> {
    pub grid: &'a GridSpec,
    pub integrands: Vec<PointIntegrand>,
    /// h^(n-1) f^∞(ν_b) per boundary face.
    pub beta: Vec<f64>,
    pub g: &'a [f64],
    pub u_prev: &'a [f64],
    pub tau: f64,
    pub scale: f64,
    /// Face used by each (cell, quadrant) per axis, `u32::MAX` if none.
    qfaces: Vec<[u32; 2]>,
    /// Interior faces as (face, lower cell, upper cell, axis).
    faces: Vec<(u32, u32, u32, u32)>,
}

impl<'a> StepContext<'a> {
    fn new(
        grid: &'a GridSpec,
        spec: &LagrangianSpec,
        u_prev: &'a ScalarField,
        g: &'a BoundaryTrace,
        tau: f64,
    ) -> Self {
        let integrands = (0..grid.n_cells()).map(|c| spec.at_cell(grid, c)).collect();
        let scale = u_prev.l2_norm() + g.l2_norm() + 1.0;
        let nq = grid.n_quadrants();
        let mut qfaces = vec![[u32::MAX; 2]; grid.n_cells() * nq];
        for c in grid.active_cells() {
            for s in 0..nq {
                for a in 0..grid.dim() {
                    if let Some(f) = grid.quadrant_face(c, s, a) {
                        qfaces[c * nq + s][a] = f as u32;
                    }
                }
            }
        }
        let faces = (0..grid.n_faces())
            .filter(|&f| grid.face_active(f))
            .map(|f| {
                let (a, b) = grid.face_cells(f);
                (f as u32, a as u32, b as u32, grid.face_axis(f) as u32)
            })
            .collect();
        StepContext {
            qfaces,
            faces,
            grid,
            integrands,
            beta: boundary_weights(grid, spec),
            g: g.values(),
            u_prev: u_prev.values(),
            tau,
            scale,
        }
    }

    pub fn n(&self) -> usize {
        self.grid.dim()
    }

    pub fn nq(&self) -> usize {
        self.grid.n_quadrants()
    }

    /// Face differences of v (inactive faces are left at zero).
    pub fn face_grad(&self, v: &[f64], out: &mut [f64]) {
        let inv_h = 1.0 / self.grid.h();
        for &(f, a, b, _) in &self.faces {
            out[f as usize] = (v[b as usize] - v[a as usize]) * inv_h;
        }
    }

    #[inline]
    pub fn quad_xi(&self, d: &[f64], c: usize, s: usize) -> [f64; 2] {
        let q = self.qfaces[c * self.nq() + s];
        let x0 = if q[0] != u32::MAX { d[q[0] as usize] } else { 0.0 };
        let x1 = if q[1] != u32::MAX { d[q[1] as usize] } else { 0.0 };
        [x0, x1]
    }

    /// div of the face flux of p, i.e. −K*p.
    pub fn div_flux(&self, p: &[f64], flux: &mut [f64], out: &mut [f64]) {
        let (n, nq) = (self.n(), self.nq());
        let inv = 1.0 / nq as f64;
        let inv_h = 1.0 / self.grid.h();
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(f, lo, hi, a) in &self.faces {
            let (lo, hi, a) = (lo as usize, hi as usize, a as usize);
            let mut acc = 0.0;
            for s in 0..nq {
                acc += if (s >> a) & 1 == 1 { p[(lo * nq + s) * n + a] } else { p[(hi * nq + s) * n + a] };
            }
            let z = acc * inv;
            flux[f as usize] = z;
            out[lo] += z * inv_h;
            out[hi] -= z * inv_h;
        }
    }

    /// ∫ f(∇v) + boundary term.
    pub fn energy(&self, v: &[f64], d: &mut [f64]) -> f64 {
        self.face_grad(v, d);
        let mut s = 0.0;
        for c in self.grid.active_cells() {
            let pi = &self.integrands[c];
            for q in 0..self.nq() {
                s += pi.eval(self.quad_xi(d, c, q));
            }
        }
        s * self.grid.quadrant_weight() + self.boundary_term(v)
    }

    pub fn boundary_term(&self, v: &[f64]) -> f64 {
        self.grid
            .boundary_faces()
            .iter()
            .enumerate()
            .map(|(b, bf)| self.beta[b] * (v[bf.cell] - self.g[b]).abs())
            .sum()
    }

    pub fn objective(&self, v: &[f64], d: &mut [f64]) -> f64 {
        let m = self.grid.cell_volume();
        let mut q = 0.0;
        for c in self.grid.active_cells() {
            q += (v[c] - self.u_prev[c]).powi(2);
        }
        self.energy(v, d) + 0.5 * m * q / self.tau
    }

    /// Largest quadrant Fenchel gap of (∇v, p).
    pub fn max_gap(&self, d: &[f64], p: &[f64]) -> f64 {
        let (n, nq) = (self.n(), self.nq());
        let mut worst: f64 = 0.0;
        for c in self.grid.active_cells() {
            let pi = &self.integrands[c];
            for s in 0..nq {
                let k = (c * nq + s) * n;
                let z = if n == 1 { [p[k], 0.0] } else { [p[k], p[k + 1]] };
                worst = worst.max(pi.fenchel_gap(self.quad_xi(d, c, s), z).to_f64());
            }
        }
        worst
    }

    /// Subdifferential interval of Σ_b β_b|v_c − g_b| over the faces of cell c.
    pub fn boundary_subdiff(&self, c: usize, vc: f64) -> (f64, f64) {
        let tie = TRACE_TIE * self.scale;
        let (mut lo, mut hi) = (0.0, 0.0);
        for b in self.grid.cell_boundary_faces(c) {
            let s = vc - self.g[b];
            let beta = self.beta[b];
            if s > tie {
                lo += beta;
                hi += beta;
            } else if s < -tie {
                lo -= beta;
                hi -= beta;
            } else {
                lo -= beta;
                hi += beta;
            }
        }
        (lo, hi)
    }

    /// ‖(v − u_prev)/τ − div Z + ∂(boundary)/h^n‖_{L²}, with the boundary
    /// subgradient chosen to minimize the residual.
    pub fn el_residual(&self, v: &[f64], divz: &[f64]) -> f64 {
        let m = self.grid.cell_volume();
        let mut s = 0.0;
        for c in self.grid.active_cells() {
            let base = (v[c] - self.u_prev[c]) / self.tau - divz[c];
            let (lo, hi) = self.boundary_subdiff(c, v[c]);
            let target = -base * m;
            let dist = if target < lo { lo - target } else if target > hi { target - hi } else { 0.0 };
            let r = dist / m;
            s += r * r;
        }
        (s * m).sqrt()
    }
}

pub(crate) struct InnerResult {
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub iters: usize,
    pub gap: f64,
    pub el: f64,
    pub converged: bool,
}

fn converged(gap: f64, el: f64, scale: f64, cfg: &SolveConfig) -> bool {
    (gap <= cfg.tol_rel * scale && el <= cfg.tol_rel * scale) || (gap <= cfg.tol_abs && el <= cfg.tol_abs)
}

/// One implicit step from `u_prev` with boundary values `g_k`.
pub fn step(
    u_prev: &ScalarField,
    g_k: &BoundaryTrace,
    spec: &LagrangianSpec,
    cfg: &SolveConfig,
) -> Result<StepOutput> {
    step_warm(u_prev, g_k, spec, cfg, None, 1, cfg.tau)
}

fn step_warm(
    u_prev: &ScalarField,
    g_k: &BoundaryTrace,
    spec: &LagrangianSpec,
    cfg: &SolveConfig,
    p0: Option<&DualField>,
    k: usize,
    t: f64,
) -> Result<StepOutput> {
    let grid = u_prev.grid();
    if g_k.grid() != grid {
        return Err(Error::GridMismatch);
    }
    cfg.validate(grid, spec)?;
    let spec_mu = cfg.effective_spec(spec)?;
    let ctx = StepContext::new(grid, &spec_mu, u_prev, g_k, cfg.tau);
    let res = match cfg.method {
        InnerMethod::PrimalDual => primal_dual::solve(&ctx, cfg, p0.map(|p| p.values())),
        InnerMethod::Newton => newton::solve(&ctx, cfg),
    };
    let mut d = vec![0.0; grid.n_faces()];
    let energy = ctx.energy(&res.v, &mut d);
    let objective = ctx.objective(&res.v, &mut d);
    let out = StepOutput {
        u: ScalarField::new(grid.clone(), res.v)?,
        z: DualField::new(grid.clone(), res.p)?,
        stat: StepStat {
            k,
            t,
            energy,
            objective,
            inner_iters: res.iters,
            gap: res.gap,
            el_residual: res.el,
            converged: res.converged,
        },
    };
    if !res.converged {
        return Err(Error::NonConvergence { step: k, iters: res.iters, best: Box::new(out) });
    }
    Ok(out)
}

/// Runs all steps; fails on the first step that does not converge.
pub fn solve(prob: &Problem, cfg: &SolveConfig) -> Result<Trajectory> {
    let (traj, failed) = run(prob, cfg, true)?;
    debug_assert!(failed.is_empty());
    Ok(traj)
}

/// Runs all steps, accepting the best iterate of non-converged steps.
/// Returns the trajectory and the indices of those steps.
pub fn solve_lenient(prob: &Problem, cfg: &SolveConfig) -> Result<(Trajectory, Vec<usize>)> {
    run(prob, cfg, false)
}

fn run(prob: &Problem, cfg: &SolveConfig, strict: bool) -> Result<(Trajectory, Vec<usize>)> {
    cfg.validate(&prob.grid, &prob.spec)?;
    let spec_mu = cfg.effective_spec(&prob.spec)?;
    let steps = ((prob.horizon / cfg.tau) - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut us = vec![prob.u0.clone()];
    let mut zs: Vec<DualField> = Vec::with_capacity(steps);
    let mut stats = Vec::with_capacity(steps + 1);
    let mut failed = Vec::new();
    {
        let g0 = prob.g_at(0.0);
        let ctx = StepContext::new(&prob.grid, &spec_mu, &prob.u0, &g0, cfg.tau);
        let mut d = vec![0.0; prob.grid.n_faces()];
        let e = ctx.energy(prob.u0.values(), &mut d);
        stats.push(StepStat {
            k: 0,
            t: 0.0,
            energy: e,
            objective: e,
            inner_iters: 0,
            gap: 0.0,
            el_residual: 0.0,
            converged: true,
        });
    }
    for k in 1..=steps {
        let t = k as f64 * cfg.tau;
        let gk = prob.g_at(t);
        let out = match step_warm(us.last().unwrap(), &gk, &prob.spec, cfg, zs.last(), k, t) {
            Ok(o) => o,
            Err(Error::NonConvergence { best, .. }) if !strict => {
                failed.push(k);
                *best
            }
            Err(e) => return Err(e),
        };
        times.push(t);
        us.push(out.u);
        zs.push(out.z);
        stats.push(out.stat);
    }
    let u = TimeSeries::new(times.clone(), us)?;
    let z = TimeSeries::new(times[1..].to_vec(), zs)?;
    Ok((Trajectory::new(u, Some(z), stats, spec_mu, cfg.tau)?, failed))
}
