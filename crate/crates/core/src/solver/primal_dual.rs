//! First-order primal–dual iteration for one step:
//! min_v max_p ⟨p, K v⟩ − Σ_q w f*(p_q) + G(v), K = quadrant gradient,
//! G = boundary term + (1/2τ)‖v − u_prev‖². Inner products are h-weighted,
//! so ‖K‖ ≤ 2√n/h.

use super::{converged, InnerResult, SolveConfig, StepContext};

// Bounds on σ/τ_pd for residual balancing; the floor is the default ratio, below it 1D runs crawl.
const RATIO_MIN: f64 = 100.0;
const RATIO_MAX: f64 = 1e5;

/// Boundary breakpoints of one cell: (g_b, β_b / h^n).
type Breaks = ([(f64, f64); 4], usize);

/// argmin_x (a/2)(x − x0)² + Σ c_b |x − g_b|.
fn prox_boundary(a: f64, x0: f64, br: &Breaks) -> f64 {
    let (pts, n) = br;
    let n = *n;
    if n == 0 {
        return x0;
    }
    let mut bp = *pts;
    let bp = &mut bp[..n];
    bp.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = bp.iter().map(|b| b.1).sum();
    // intervals: (−∞, g_0), (g_0, g_1), …, (g_{n−1}, ∞); below index i the
    // faces with smaller g contribute +c, the others −c
    let mut below = 0.0;
    for i in 0..=n {
        let s = below - (total - below);
        let x = x0 - s / a;
        let lo = if i == 0 { f64::NEG_INFINITY } else { bp[i - 1].0 };
        let hi = if i == n { f64::INFINITY } else { bp[i].0 };
        if x > lo && x < hi {
            return x;
        }
        if i < n {
            // kink at bp[i]: subdifferential [s_minus, s_plus]
            let dm = a * (bp[i].0 - x0) + s;
            let dp = dm + 2.0 * bp[i].1;
            if dm <= 0.0 && dp >= 0.0 {
                return bp[i].0;
            }
            below += bp[i].1;
        }
    }
    // unreachable for a > 0; fall back to the unconstrained point
    x0
}

pub(crate) fn solve(ctx: &StepContext, cfg: &SolveConfig, p0: Option<&[f64]>) -> InnerResult {
    let g = ctx.grid;
    let (n, nq) = (ctx.n(), ctx.nq());
    let m = g.cell_volume();
    let active: Vec<usize> = g.active_cells().collect();
    let breaks: Vec<Breaks> = active
        .iter()
        .map(|&c| {
            let mut b = ([(0.0, 0.0); 4], 0);
            for f in g.cell_boundary_faces(c) {
                b.0[b.1] = (ctx.g[f], ctx.beta[f] / m);
                b.1 += 1;
            }
            b
        })
        .collect();

    let mut v = ctx.u_prev.to_vec();
    let mut v_old = v.clone();
    let mut vbar = v.clone();
    let mut p = match p0 {
        Some(p) => p.to_vec(),
        None => vec![0.0; g.n_cells() * nq * n],
    };
    for &c in &active {
        let norm = ctx.integrands[c].norm;
        for s in 0..nq {
            let k = (c * nq + s) * n;
            let z = if n == 1 { [p[k], 0.0] } else { [p[k], p[k + 1]] };
            let z = norm.project_dual_ball(z);
            p[k] = z[0];
            if n == 2 {
                p[k + 1] = z[1];
            }
        }
    }
    let (mut sigma, mut tau_pd) = cfg.step_sizes(g);
    let gamma = 1.0 / ctx.tau;
    let mut d = vec![0.0; g.n_faces()];
    let mut flux = vec![0.0; g.n_faces()];
    let mut divz = vec![0.0; g.n_cells()];

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64, f64)> = None;
    let mut adapt = 0.5;
    let mut iters = 0;
    for it in 1..=cfg.max_iters {
        iters = it;
        ctx.face_grad(&vbar, &mut d);
        for &c in &active {
            let pi = &ctx.integrands[c];
            for s in 0..nq {
                let k = (c * nq + s) * n;
                let xi = ctx.quad_xi(&d, c, s);
                let y = if n == 1 {
                    [p[k] + sigma * xi[0], 0.0]
                } else {
                    [p[k] + sigma * xi[0], p[k + 1] + sigma * xi[1]]
                };
                let z = pi.prox_conjugate(sigma, y);
                p[k] = z[0];
                if n == 2 {
                    p[k + 1] = z[1];
                }
            }
        }
        ctx.div_flux(&p, &mut flux, &mut divz);
        v_old.copy_from_slice(&v);
        let a = 1.0 / tau_pd + 1.0 / ctx.tau;
        for (i, &c) in active.iter().enumerate() {
            let y = v[c] + tau_pd * divz[c];
            let x0 = (y / tau_pd + ctx.u_prev[c] / ctx.tau) / a;
            v[c] = prox_boundary(a, x0, &breaks[i]);
        }
        let theta = if cfg.accelerate {
            let th = 1.0 / (1.0 + 2.0 * gamma * tau_pd).sqrt();
            tau_pd *= th;
            sigma /= th;
            th
        } else {
            cfg.theta_pd
        };
        for &c in &active {
            vbar[c] = v[c] + theta * (v[c] - v_old[c]);
        }

        if it % cfg.check_every == 0 || it == cfg.max_iters {
            ctx.face_grad(&v, &mut d);
            let gap = ctx.max_gap(&d, &p);
            let el = ctx.el_residual(&v, &divz);
            if converged(gap, el, ctx.scale, cfg) {
                return InnerResult { v, p, iters: it, gap, el, converged: true };
            }
            if cfg.adaptive && !cfg.accelerate && gap > 0.0 && el > 0.0 {
                let ratio = sigma / tau_pd;
                if gap > 2.0 * el && ratio < RATIO_MAX {
                    sigma *= 1.0 + adapt;
                    tau_pd /= 1.0 + adapt;
                    adapt *= 0.98;
                } else if el > 2.0 * gap && ratio > RATIO_MIN {
                    sigma /= 1.0 + adapt;
                    tau_pd *= 1.0 + adapt;
                    adapt *= 0.98;
                }
            }
            let score = gap.max(el);
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, v.clone(), p.clone(), gap, el));
            }
        }
    }
    let (_, v, p, gap, el) = best.expect("at least one check ran");
    InnerResult { v, p, iters, gap, el, converged: false }
}
