//! Newton–CG for smooth integrands. The boundary term |s| is replaced by a
//! Huber function with width ε driven down to 1e-7·scale; boundary cells
//! left inside the band are then pinned to their data and the remaining
//! cells are solved with the exact |s|.

use super::{converged, InnerResult, SolveConfig, StepContext};
use crate::lagrangian::Norm;

const EPS_FINAL: f64 = 1e-7;
/// Huber width on free boundary cells while the others are pinned.
const EPS_PINNED: f64 = 1e-14;
const PIN_ROUNDS: usize = 4;
const EPS_START: f64 = 1e-3;
const MAX_CG: usize = 5000;

#[inline]
fn huber(s: f64, eps: f64) -> (f64, f64, f64) {
    if s.abs() > eps {
        (s.abs() - 0.5 * eps, s.signum(), 0.0)
    } else {
        (0.5 * s * s / eps, s / eps, 1.0 / eps)
    }
}

struct Work<'a, 'b> {
    ctx: &'a StepContext<'b>,
    active: Vec<usize>,
    /// Unknowns; boundary cells pinned to their data are left out.
    free: Vec<usize>,
    m: f64,
    w: f64,
    d: Vec<f64>,
    flux: Vec<f64>,
    tmp_p: Vec<f64>,
    tmp_c: Vec<f64>,
    /// Hessians of f per quadrant at the current iterate.
    hess: Vec<[[f64; 2]; 2]>,
    /// Huber curvature term per cell, divided by h^n.
    bdiag: Vec<f64>,
}

impl<'a, 'b> Work<'a, 'b> {
    fn new(ctx: &'a StepContext<'b>) -> Self {
        let g = ctx.grid;
        let ncell = g.n_cells();
        Work {
            ctx,
            active: g.active_cells().collect(),
            free: g.active_cells().collect(),
            m: g.cell_volume(),
            w: g.quadrant_weight(),
            d: vec![0.0; g.n_faces()],
            flux: vec![0.0; g.n_faces()],
            tmp_p: vec![0.0; ncell * g.n_quadrants() * g.dim()],
            tmp_c: vec![0.0; ncell],
            hess: vec![[[0.0; 2]; 2]; ncell * g.n_quadrants()],
            bdiag: vec![0.0; ncell],
        }
    }

    fn objective(&mut self, v: &[f64], eps: f64) -> f64 {
        let ctx = self.ctx;
        ctx.face_grad(v, &mut self.d);
        let nq = ctx.nq();
        let mut s = 0.0;
        for &c in &self.active {
            let pi = &ctx.integrands[c];
            for q in 0..nq {
                s += pi.eval(ctx.quad_xi(&self.d, c, q));
            }
        }
        let mut e = s * self.w;
        for (b, bf) in ctx.grid.boundary_faces().iter().enumerate() {
            e += ctx.beta[b] * huber(v[bf.cell] - ctx.g[b], eps).0;
        }
        let mut q = 0.0;
        for &c in &self.active {
            q += (v[c] - ctx.u_prev[c]).powi(2);
        }
        e + 0.5 * self.m * q / ctx.tau
    }

    /// Gradient divided by h^n; also refreshes Hessian data. Writes the
    /// quadrant gradients of f into `p`.
    fn gradient(&mut self, v: &[f64], eps: f64, p: &mut [f64], grad: &mut [f64]) {
        let ctx = self.ctx;
        let (n, nq) = (ctx.n(), ctx.nq());
        ctx.face_grad(v, &mut self.d);
        for &c in &self.active {
            let pi = &ctx.integrands[c];
            for s in 0..nq {
                let xi = ctx.quad_xi(&self.d, c, s);
                let gq = pi.grad(xi).expect("smooth integrand");
                let k = (c * nq + s) * n;
                p[k] = gq[0];
                if n == 2 {
                    p[k + 1] = gq[1];
                }
                self.hess[c * nq + s] = pi.hessian(xi).expect("smooth integrand");
            }
        }
        ctx.div_flux(p, &mut self.flux, &mut self.tmp_c);
        for &c in &self.active {
            grad[c] = -self.tmp_c[c] + (v[c] - ctx.u_prev[c]) / ctx.tau;
            self.bdiag[c] = 0.0;
        }
        for (b, bf) in ctx.grid.boundary_faces().iter().enumerate() {
            let (_, d1, d2) = huber(v[bf.cell] - ctx.g[b], eps);
            grad[bf.cell] += ctx.beta[b] * d1 / self.m;
            self.bdiag[bf.cell] += ctx.beta[b] * d2 / self.m;
        }
    }

    fn hess_vec(&mut self, x: &[f64], out: &mut [f64]) {
        let ctx = self.ctx;
        let (n, nq) = (ctx.n(), ctx.nq());
        ctx.face_grad(x, &mut self.d);
        for &c in &self.active {
            for s in 0..nq {
                let xi = ctx.quad_xi(&self.d, c, s);
                let h = &self.hess[c * nq + s];
                let k = (c * nq + s) * n;
                self.tmp_p[k] = h[0][0] * xi[0] + h[0][1] * xi[1];
                if n == 2 {
                    self.tmp_p[k + 1] = h[1][0] * xi[0] + h[1][1] * xi[1];
                }
            }
        }
        ctx.div_flux(&self.tmp_p, &mut self.flux, &mut self.tmp_c);
        for &c in &self.active {
            out[c] = -self.tmp_c[c] + (self.bdiag[c] + 1.0 / ctx.tau) * x[c];
        }
    }

    fn jacobi(&self) -> Vec<f64> {
        let ctx = self.ctx;
        let g = ctx.grid;
        let (n, nq) = (ctx.n(), ctx.nq());
        let inv_h = 1.0 / g.h();
        let scale = self.w / self.m;
        let mut diag = vec![0.0; g.n_cells()];
        for &c in &self.active {
            for s in 0..nq {
                let h = &self.hess[c * nq + s];
                let mut e = [0.0; 2];
                for a in 0..n {
                    if let Some(f) = g.quadrant_face(c, s, a) {
                        let (lo, hi) = g.face_cells(f);
                        let nb = if lo == c { hi } else { lo };
                        e[a] = if lo == c { -inv_h } else { inv_h };
                        diag[nb] += scale * h[a][a] * inv_h * inv_h;
                    }
                }
                diag[c] += scale
                    * (e[0] * (h[0][0] * e[0] + h[0][1] * e[1]) + e[1] * (h[1][0] * e[0] + h[1][1] * e[1]));
            }
        }
        for &c in &self.active {
            diag[c] += self.bdiag[c] + 1.0 / ctx.tau;
        }
        diag
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.free.iter().map(|&c| a[c] * b[c]).sum()
    }

    /// Preconditioned CG for H x = rhs to relative residual `rtol`.
    fn cg(&mut self, rhs: &[f64], rtol: f64, x: &mut [f64]) -> usize {
        let ncell = rhs.len();
        let diag = self.jacobi();
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut r = rhs.to_vec();
        let mut z = vec![0.0; ncell];
        for &c in &self.free {
            z[c] = r[c] / diag[c];
        }
        let mut p = z.clone();
        let mut hp = vec![0.0; ncell];
        let mut rz = self.dot(&r, &z);
        let r0 = self.dot(&r, &r).sqrt();
        if r0 == 0.0 {
            return 0;
        }
        for it in 1..=MAX_CG {
            self.hess_vec(&p, &mut hp);
            let php = self.dot(&p, &hp);
            if php <= 0.0 {
                return it;
            }
            let alpha = rz / php;
            for &c in &self.free {
                x[c] += alpha * p[c];
                r[c] -= alpha * hp[c];
            }
            if self.dot(&r, &r).sqrt() <= rtol * r0 {
                return it;
            }
            for &c in &self.free {
                z[c] = r[c] / diag[c];
            }
            let rz_new = self.dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for &c in &self.free {
                p[c] = z[c] + beta * p[c];
            }
        }
        MAX_CG
    }
}

/// Rounding level of the EL residual: a relative error ε in v shows up in
/// div ∇f(∇v) amplified by |∇|²·sup f''.
fn noise_floor(ctx: &StepContext, v: &[f64]) -> f64 {
    let g = ctx.grid;
    let curv = g
        .active_cells()
        .map(|c| {
            let p = &ctx.integrands[c];
            let w = match p.norm {
                Norm::Euclid { w } => w,
                Norm::L1 { a } => a[0].max(a[1]),
            };
            w * w / p.c0
        })
        .fold(0.0, f64::max);
    let vmax = g.active_cells().map(|c| v[c].abs()).fold(1.0, f64::max);
    let l = g.gradient_norm_bound();
    8.0 * f64::EPSILON * vmax * l * l * curv * g.domain_measure().sqrt()
}

struct State {
    v: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    trial: Vec<f64>,
    trial_p: Vec<f64>,
    trial_grad: Vec<f64>,
    dir: Vec<f64>,
    iters: usize,
}

/// Damped Newton at fixed Huber width until the gradient norm is below
/// `tol`. Returns false when the iteration budget runs out.
fn newton_loop(wk: &mut Work, st: &mut State, eps: f64, tol: f64, max_iters: usize) -> bool {
    let scale = wk.ctx.scale;
    let norm = |wk: &Work, x: &[f64]| (wk.m * wk.dot(x, x)).sqrt();
    wk.gradient(&st.v, eps, &mut st.p, &mut st.grad);
    let mut gnorm = norm(wk, &st.grad);
    let mut e = wk.objective(&st.v, eps);
    // inexact CG until a line search fails, then one retry at full accuracy
    let mut exact = false;
    while gnorm > tol {
        if st.iters >= max_iters {
            return false;
        }
        st.iters += 1;
        let rhs: Vec<f64> = st.grad.iter().map(|x| -x).collect();
        let rtol = if exact { 1e-12 } else { (gnorm / scale).sqrt().clamp(1e-10, 1e-2) };
        wk.cg(&rhs, rtol, &mut st.dir);
        let slope = wk.m * wk.dot(&st.grad, &st.dir);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            st.trial.copy_from_slice(&st.v);
            for &c in &wk.free {
                st.trial[c] = st.v[c] + t * st.dir[c];
            }
            let e_new = wk.objective(&st.trial, eps);
            let flat = (e_new - e).abs() <= 1e-13 * (e.abs() + 1.0);
            if e_new <= e + 1e-4 * t * slope || flat {
                wk.gradient(&st.trial, eps, &mut st.trial_p, &mut st.trial_grad);
                let gn = norm(wk, &st.trial_grad);
                if !flat || gn < gnorm {
                    std::mem::swap(&mut st.v, &mut st.trial);
                    std::mem::swap(&mut st.p, &mut st.trial_p);
                    std::mem::swap(&mut st.grad, &mut st.trial_grad);
                    gnorm = gn;
                    e = e_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if exact {
                break;
            }
            exact = true;
            continue;
        }
        exact = false;
    }
    true
}

pub(crate) fn solve(ctx: &StepContext, cfg: &SolveConfig) -> InnerResult {
    let g = ctx.grid;
    let ncell = g.n_cells();
    let mut wk = Work::new(ctx);
    let v = ctx.u_prev.to_vec();
    let p = vec![0.0; ncell * g.n_quadrants() * g.dim()];
    let mut st = State {
        trial: v.clone(),
        v,
        trial_p: p.clone(),
        p,
        grad: vec![0.0; ncell],
        trial_grad: vec![0.0; ncell],
        dir: vec![0.0; ncell],
        iters: 0,
    };
    let eps_final = EPS_FINAL * ctx.scale;
    let mut eps = (EPS_START * ctx.scale).max(eps_final);
    let target = cfg.tol_rel * ctx.scale;
    loop {
        let last = eps <= eps_final;
        let stage_tol = if last { target } else { target.max(1e-2 * eps) };
        if !newton_loop(&mut wk, &mut st, eps, stage_tol, cfg.max_iters) || last {
            break;
        }
        eps = (eps * 1e-2).max(eps_final);
    }
    // Pin the cells whose trace ended in the band; release a pinned cell
    // when its boundary multiplier leaves [-β, β] and go again.
    let mut released = vec![false; ncell];
    for _ in 0..PIN_ROUNDS {
        let mut pinned = vec![false; ncell];
        let mut loose = released.clone();
        let mut gsum = vec![0.0; ncell];
        let mut gcount = vec![0usize; ncell];
        for (b, bf) in g.boundary_faces().iter().enumerate() {
            if (st.v[bf.cell] - ctx.g[b]).abs() <= eps_final {
                pinned[bf.cell] = true;
            } else {
                loose[bf.cell] = true;
            }
            gsum[bf.cell] += ctx.g[b];
            gcount[bf.cell] += 1;
        }
        let fixed: Vec<usize> = (0..ncell).filter(|&c| pinned[c] && !loose[c]).collect();
        if fixed.is_empty() {
            break;
        }
        for &c in &fixed {
            st.v[c] = gsum[c] / gcount[c] as f64;
        }
        wk.free = g.active_cells().filter(|&c| !(pinned[c] && !loose[c])).collect();
        eps = EPS_PINNED * ctx.scale;
        newton_loop(&mut wk, &mut st, eps, target, cfg.max_iters);
        wk.gradient(&st.v, eps, &mut st.p, &mut st.grad);
        let mut flux = vec![0.0; g.n_faces()];
        let mut divz = vec![0.0; ncell];
        ctx.div_flux(&st.p, &mut flux, &mut divz);
        let mut again = false;
        for &c in &fixed {
            let need = -((st.v[c] - ctx.u_prev[c]) / ctx.tau - divz[c]) * wk.m;
            let (lo, hi) = ctx.boundary_subdiff(c, st.v[c]);
            if need < lo - target * wk.m || need > hi + target * wk.m {
                released[c] = true;
                again = true;
            }
        }
        if !again {
            break;
        }
        wk.free = g.active_cells().collect();
        eps = eps_final;
        newton_loop(&mut wk, &mut st, eps, target.max(1e-2 * eps), cfg.max_iters);
    }
    let State { v, mut p, mut grad, iters, .. } = st;
    // z is the exact gradient of f at the final iterate
    let mut d = vec![0.0; g.n_faces()];
    wk.gradient(&v, eps, &mut p, &mut grad);
    ctx.face_grad(&v, &mut d);
    let gap = ctx.max_gap(&d, &p);
    let mut flux = vec![0.0; g.n_faces()];
    let mut divz = vec![0.0; ncell];
    ctx.div_flux(&p, &mut flux, &mut divz);
    let el = ctx.el_residual(&v, &divz);
    let ok = converged(gap, el, ctx.scale, cfg) || (converged(gap, 0.0, ctx.scale, cfg) && el <= noise_floor(ctx, &v));
    InnerResult { v, p, iters, gap, el, converged: ok }
}
