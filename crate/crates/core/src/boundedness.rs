//! Local energy estimate, De Giorgi sup-bounds and the unbounded radial
//! example.
//!
//! The constants in the energy estimate and in the sup-bound exist but are
//! not explicit; here they are calibrated on training data (largest
//! observed ratio) and soundness is tested on held-out runs.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{quadrant_gradient, total_variation, GridSpec, Gridded, ScalarField, TimeSeries};

pub const CALIBRATION_NOTE: &str =
    "constants c and C are existence constants; c_cal is calibrated empirically as the largest ratio on a training set";

/// Backward cylinder B(center, ρ) × (t0 − θρ, t0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub t0: f64,
    pub rho: f64,
    pub theta: f64,
}

impl Cylinder {
    pub fn new(center: [f64; 2], t0: f64, rho: f64, theta: f64) -> Result<Self> {
        if !(rho > 0.0) || !(theta > 0.0) || !rho.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidParam("rho and theta must be positive".into()));
        }
        Ok(Cylinder { center, t0, rho, theta })
    }

    pub fn t_start(&self) -> f64 {
        self.t0 - self.theta * self.rho
    }

    /// Same centre, top time and θ, radius ρ·factor.
    pub fn scaled(&self, factor: f64) -> Cylinder {
        Cylinder { rho: self.rho * factor, ..*self }
    }

    fn dist(&self, grid: &GridSpec, c: usize) -> f64 {
        let x = grid.cell_center(c);
        let d0 = x[0] - self.center[0];
        let d1 = if grid.dim() > 1 { x[1] - self.center[1] } else { 0.0 };
        d0.hypot(d1)
    }

    /// Active cells whose centres lie in B(center, r).
    pub fn ball_cells(&self, grid: &GridSpec, r: f64) -> Vec<usize> {
        grid.active_cells().filter(|&c| self.dist(grid, c) < r).collect()
    }

    /// Stamp indices covering [t0 − θρ, t0], widened to whole steps.
    pub fn stamps(&self, times: &[f64]) -> Result<(usize, usize)> {
        self.stamps_for(times, self.theta * self.rho)
    }

    fn stamps_for(&self, times: &[f64], len: f64) -> Result<(usize, usize)> {
        let eps = 1e-12 * (1.0 + self.t0.abs());
        let lo_t = self.t0 - len;
        let last = times.len() - 1;
        if lo_t < times[0] - eps || self.t0 > times[last] + eps {
            return Err(Error::CylinderOutOfDomain(format!(
                "time span [{lo_t}, {}] not inside [{}, {}]",
                self.t0, times[0], times[last]
            )));
        }
        let lo = times.partition_point(|&t| t <= lo_t + eps).saturating_sub(1);
        let hi = times.partition_point(|&t| t < self.t0 - eps).min(last);
        Ok((lo, hi))
    }

    /// Errors unless B(center, ρ) stays inside the active region, away
    /// from the boundary faces.
    pub fn check_inside(&self, grid: &GridSpec, times: &[f64]) -> Result<()> {
        self.stamps(times)?;
        let h = grid.h();
        let o = grid.origin();
        let cells = grid.cells();
        for a in 0..grid.dim() {
            let lo = o[a];
            let hi = o[a] + cells[a] as f64 * h;
            if self.center[a] - self.rho < lo || self.center[a] + self.rho > hi {
                return Err(Error::CylinderOutOfDomain(format!("ball leaves the grid along axis {a}")));
            }
        }
        let inside = self.ball_cells(grid, self.rho);
        if inside.is_empty() {
            return Err(Error::CylinderOutOfDomain("ball contains no cell centre".into()));
        }
        for b in grid.boundary_faces() {
            if self.dist(grid, b.cell) < self.rho {
                return Err(Error::CylinderOutOfDomain("ball touches the domain boundary".into()));
            }
        }
        Ok(())
    }

    /// Discrete cylinder with the ball radius `r` and time length θ·ρ_full.
    fn cells_and_stamps(&self, grid: &GridSpec, times: &[f64], r: f64) -> Result<(Vec<usize>, usize, usize)> {
        let (lo, hi) = self.stamps(times)?;
        Ok((self.ball_cells(grid, r), lo, hi))
    }
}

/// Cylinders of radius ρ and aspect θ centred on a lattice of the given
/// spacing, with top times at the last `t_count` stamps, that fit inside the
/// domain.
pub fn cylinder_family(
    u: &TimeSeries<ScalarField>,
    rho: f64,
    theta: f64,
    spacing: f64,
    t_count: usize,
) -> Vec<Cylinder> {
    let grid = u.grid();
    let times = u.times();
    let o = grid.origin();
    let cells = grid.cells();
    let h = grid.h();
    let axis = |a: usize| -> Vec<f64> {
        if a >= grid.dim() {
            return vec![0.0];
        }
        let len = cells[a] as f64 * h;
        let m = (len / spacing).floor() as usize;
        (0..=m).map(|i| o[a] + i as f64 * spacing).collect()
    };
    let mut out = Vec::new();
    for &t0 in times.iter().rev().take(t_count) {
        for &y in &axis(1) {
            for &x in &axis(0) {
                if let Ok(c) = Cylinder::new([x, y], t0, rho, theta) {
                    if c.check_inside(grid, times).is_ok() {
                        out.push(c);
                    }
                }
            }
        }
    }
    out
}

/// Values of u on the discrete cylinder, sorted.
pub fn cylinder_values(u: &TimeSeries<ScalarField>, cyl: &Cylinder) -> Result<Vec<f64>> {
    let (lo, hi) = cyl.stamps(u.times())?;
    let cells = cyl.ball_cells(u.grid(), cyl.rho);
    let mut v: Vec<f64> = (lo..=hi).flat_map(|j| cells.iter().map(move |&c| u.frame(j).values()[c])).collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Lower q-quantile of u on the cylinder (q = 0 gives the minimum).
pub fn cylinder_quantile(u: &TimeSeries<ScalarField>, cyl: &Cylinder, q: f64) -> Result<f64> {
    let v = cylinder_values(u, cyl)?;
    if v.is_empty() {
        return Err(Error::CylinderOutOfDomain("cylinder holds no cells".into()));
    }
    Ok(v[((v.len() - 1) as f64 * q.clamp(0.0, 1.0)) as usize])
}

/// Cylinder at the final stamp centred on the cell where the final frame
/// peaks among the admissible centres.
pub fn peak_cylinder(u: &TimeSeries<ScalarField>, rho: f64, theta: f64) -> Result<Cylinder> {
    let grid = u.grid();
    let t0 = *u.times().last().unwrap();
    let last = u.frames().last().unwrap();
    grid.active_cells()
        .filter_map(|c| {
            let cyl = Cylinder::new(grid.cell_center(c), t0, rho, theta).ok()?;
            cyl.check_inside(grid, u.times()).ok()?;
            Some((last.values()[c], cyl))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
        .ok_or_else(|| Error::CylinderOutOfDomain("no admissible centre".into()))
}

/// Smooth cutoff for the energy estimate: 1 on B(z, ρ/2), zero outside
/// B(z, ρ); in time zero at t0 − θρ, rising to 1 by the midpoint.
pub fn standard_cutoff(cyl: &Cylinder, x: [f64; 2], t: f64, dim: usize) -> f64 {
    let d0 = x[0] - cyl.center[0];
    let d1 = if dim > 1 { x[1] - cyl.center[1] } else { 0.0 };
    let s = d0.hypot(d1) / cyl.rho;
    let space = if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let q = (s - 0.5) * 2.0;
        0.5 * (1.0 + (std::f64::consts::PI * q).cos())
    };
    let len = cyl.theta * cyl.rho;
    let q = (t - cyl.t_start()) / len;
    let time = if q <= 0.0 {
        0.0
    } else if q >= 0.5 {
        1.0
    } else {
        0.5 * (1.0 - (2.0 * std::f64::consts::PI * q).cos())
    };
    space * time
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyTerms {
    pub lhs: f64,
    /// (∬|∇φ|(u−k)₊^α, ∬(∂_tφ)₊(u−k)₊^{1+α}, ∬_{u>k} φ)
    pub rhs: [f64; 3],
}

impl EnergyTerms {
    pub fn rhs_sum(&self) -> f64 {
        self.rhs.iter().sum()
    }

    /// lhs / Σ rhs; zero when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs_sum()
        }
    }
}

/// Terms of the local energy estimate for level k and cutoff `phi(x, t)`,
/// quadratured over the stamps of the cylinder. The level-set term uses
/// {u > k}, the set the estimate is derived on.
pub fn energy_estimate_terms(
    u: &TimeSeries<ScalarField>,
    k: f64,
    alpha: f64,
    phi: impl Fn([f64; 2], f64) -> f64,
    cyl: &Cylinder,
) -> Result<EnergyTerms> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParam(format!("alpha must be at least 1, got {alpha}")));
    }
    let grid = u.grid();
    let times = u.times();
    cyl.check_inside(grid, times)?;
    let (lo, hi) = cyl.stamps(times)?;
    let m = grid.cell_volume();
    let nq = grid.n_quadrants() as f64;
    let mut sup_part: f64 = 0.0;
    let mut tv_part = 0.0;
    let mut rhs = [0.0; 3];
    let mut prev_phi: Option<ScalarField> = None;
    for j in lo..=hi {
        let t = times[j];
        let pf = ScalarField::from_fn(grid, |x| phi(x, t));
        let uj = u.frame(j).values();
        let plus = |c: usize| (uj[c] - k).max(0.0);
        let mut s = 0.0;
        for c in grid.active_cells() {
            s += pf.values()[c] * plus(c).powf(1.0 + alpha);
        }
        sup_part = sup_part.max(m * s);
        if j > lo {
            let dt = t - times[j - 1];
            let mut prod = ScalarField::zeros(grid);
            for c in grid.active_cells() {
                prod.values_mut()[c] = pf.values()[c] * plus(c).powf(alpha);
            }
            tv_part += dt * total_variation(&prod);
            let gp = quadrant_gradient(&pf);
            let prev = prev_phi.as_ref().unwrap();
            let (mut a, mut b, mut c3) = (0.0, 0.0, 0.0);
            for c in grid.active_cells() {
                let mut gn = 0.0;
                for q in 0..grid.n_quadrants() {
                    let x = gp.get(c, q);
                    gn += x[0].hypot(x[1]);
                }
                gn /= nq;
                let p = plus(c);
                a += gn * p.powf(alpha);
                let dphi = ((pf.values()[c] - prev.values()[c]) / dt).max(0.0);
                b += dphi * p.powf(1.0 + alpha);
                if uj[c] > k {
                    c3 += pf.values()[c];
                }
            }
            rhs[0] += dt * m * a;
            rhs[1] += dt * m * b;
            rhs[2] += dt * m * c3;
        }
        prev_phi = Some(pf);
    }
    Ok(EnergyTerms { lhs: sup_part + tv_part, rhs })
}

/// Largest lhs/Σrhs over the given terms: the smallest constant for which
/// the estimate holds on this training data.
pub fn calibrate_energy_constant(terms: &[EnergyTerms]) -> f64 {
    terms.iter().map(|t| t.ratio()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeGiorgiConfig {
    pub k0: f64,
    pub xi: f64,
    pub r: f64,
    pub alpha: f64,
    pub c_cal: f64,
    pub max_levels: usize,
}

impl DeGiorgiConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.r > n as f64) {
            return Err(Error::InvalidParam(format!("r must exceed the dimension {n}, got {}", self.r)));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidParam("alpha must be at least 1".into()));
        }
        if !(self.xi > 0.0) {
            return Err(Error::InvalidParam("xi must be positive".into()));
        }
        if !(self.c_cal >= 0.0) || !self.c_cal.is_finite() {
            return Err(Error::InvalidParam("c_cal must be nonnegative".into()));
        }
        if self.max_levels == 0 {
            return Err(Error::InvalidParam("max_levels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRow {
    pub i: usize,
    pub k_i: f64,
    pub rho_i: f64,
    pub y_i: f64,
    pub cells_above: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    /// Y_i reached zero or kept decreasing through the last level.
    Converged,
    /// Y did not decrease within max_levels.
    InsufficientLevels,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupBound {
    pub bound: f64,
    /// k from the closing choice of the iteration.
    pub k: f64,
    /// ⨍⨍_{Q0}(u − k0)₊^r
    pub average: f64,
    /// max of u on the half cylinder Q⁻_{ρ/2,θ}.
    pub observed_max: f64,
    pub sound: bool,
    pub table: Vec<LevelRow>,
    pub status: IterationStatus,
    pub cylinder: Cylinder,
    pub config: DeGiorgiConfig,
    pub note: &'static str,
}

fn cylinder_average(
    u: &TimeSeries<ScalarField>,
    cells: &[usize],
    lo: usize,
    hi: usize,
    f: impl Fn(f64) -> f64,
) -> (f64, usize) {
    let mut s = 0.0;
    let mut above = 0;
    let mut count = 0usize;
    for j in lo..=hi {
        let v = u.frame(j).values();
        for &c in cells {
            let y = f(v[c]);
            if y > 0.0 {
                above += 1;
            }
            s += y;
            count += 1;
        }
    }
    (if count > 0 { s / count as f64 } else { 0.0 }, above)
}

/// The factor multiplying C in the closing choice of k.
pub fn degiorgi_factor(n: usize, xi: f64, theta: f64, r: f64) -> f64 {
    let nf = n as f64;
    ((1.0 + 1.0 / xi).powf(1.0 + 1.0 / nf) / theta).powf(nf / (r - nf))
}

/// k = C·((1+1/ξ)^{1+1/n}/θ)^{n/(r−n)}·(avg + θρ)^{1/(r−n)} + ρ + ξθ.
pub fn degiorgi_k(c: f64, n: usize, cyl: &Cylinder, cfg: &DeGiorgiConfig, average: f64) -> f64 {
    let nf = n as f64;
    c * degiorgi_factor(n, cfg.xi, cyl.theta, cfg.r) * (average + cyl.theta * cyl.rho).powf(1.0 / (cfg.r - nf))
        + cyl.rho
        + cfg.xi * cyl.theta
}

/// Sup-bound on Q⁻_{ρ/2,θ} with the level table of the iteration.
pub fn degiorgi_supbound(u: &TimeSeries<ScalarField>, cyl: &Cylinder, cfg: &DeGiorgiConfig) -> Result<SupBound> {
    let grid = u.grid();
    let n = grid.dim();
    cfg.validate(n)?;
    cyl.check_inside(grid, u.times())?;
    let (q0, lo, hi) = cyl.cells_and_stamps(grid, u.times(), cyl.rho)?;
    let (average, _) = cylinder_average(u, &q0, lo, hi, |v| (v - cfg.k0).max(0.0).powf(cfg.r));
    let k = degiorgi_k(cfg.c_cal, n, cyl, cfg, average);
    let half = cyl.ball_cells(grid, 0.5 * cyl.rho);
    let observed_max = (lo..=hi)
        .flat_map(|j| half.iter().map(move |&c| u.frame(j).values()[c]))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut table = Vec::with_capacity(cfg.max_levels);
    for i in 0..cfg.max_levels {
        let p = 0.5f64.powi(i as i32);
        let k_i = (1.0 - p) * k + cfg.k0;
        let rho_i = 0.5 * cyl.rho + 0.5 * p * cyl.rho;
        let cells = cyl.ball_cells(grid, rho_i);
        let (y_i, cells_above) = cylinder_average(u, &cells, lo, hi, |v| (v - k_i).max(0.0).powi(2));
        table.push(LevelRow { i, k_i, rho_i, y_i, cells_above });
        if y_i == 0.0 {
            break;
        }
    }
    let last = table.last().unwrap();
    let status = if last.y_i == 0.0 || (table.len() >= 2 && last.y_i < table[table.len() - 2].y_i) {
        IterationStatus::Converged
    } else {
        IterationStatus::InsufficientLevels
    };
    let bound = cfg.k0 + k;
    Ok(SupBound {
        bound,
        k,
        average,
        observed_max,
        sound: bound >= observed_max,
        table,
        status,
        cylinder: *cyl,
        config: cfg.clone(),
        note: CALIBRATION_NOTE,
    })
}

/// Smallest C for which the sup-bound dominates the observed excess over
/// k0 on the half cylinder; 0 when ρ + ξθ already does.
pub fn calibrate_degiorgi(u: &TimeSeries<ScalarField>, cyl: &Cylinder, cfg: &DeGiorgiConfig) -> Result<f64> {
    let probe = DeGiorgiConfig { c_cal: 0.0, ..cfg.clone() };
    let sb = degiorgi_supbound(u, cyl, &probe)?;
    let n = u.grid().dim();
    let unit = degiorgi_k(1.0, n, cyl, cfg, sb.average) - degiorgi_k(0.0, n, cyl, cfg, sb.average);
    let excess = sb.observed_max - cfg.k0 - cyl.rho - cfg.xi * cyl.theta;
    Ok(if excess <= 0.0 { 0.0 } else { excess / unit })
}

/// Y_{i+1} = C·b^i·Y_i^{1+β} from Y_0 = y0, `steps` values.
pub fn fast_geometric(y0: f64, c: f64, b: f64, beta: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps);
    let mut y = y0;
    for i in 0..steps {
        out.push(y);
        y = c * b.powi(i as i32) * y.powf(1.0 + beta);
        if !y.is_finite() {
            out.push(f64::INFINITY);
            break;
        }
    }
    out
}

/// C^{−1/β} b^{−1/β²}: starting below it the recursion tends to zero.
pub fn fast_geometric_threshold(c: f64, b: f64, beta: f64) -> f64 {
    c.powf(-1.0 / beta) * b.powf(-1.0 / (beta * beta))
}

/// (1−t)₊(n−1)/|x| at cell centres, capped at (1−t)₊(n−1)/(h/2).
pub fn unbounded_example(n: usize, grid: &GridSpec, t: f64) -> Result<ScalarField> {
    if n != grid.dim() {
        return Err(Error::InvalidParam(format!("n = {n} but the grid is {}-dimensional", grid.dim())));
    }
    let a = (1.0 - t).max(0.0) * (n as f64 - 1.0);
    let cap = a / (0.5 * grid.h());
    Ok(ScalarField::from_fn(grid, |x| {
        let r = if n == 1 { x[0].abs() } else { x[0].hypot(x[1]) };
        if r == 0.0 {
            cap
        } else {
            (a / r).min(cap)
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthRow {
    pub j: usize,
    /// Outer radius 2^{−j}.
    pub radius: f64,
    pub max: f64,
    /// max_j / max_{j−1}; none for the first row.
    pub ratio: Option<f64>,
    /// Row of the capped centre cell.
    pub capped: bool,
}

/// Max of u over the dyadic annuli 2^{−j−1} ≤ |x| < 2^{−j} for j = 0, 1, …
/// while 2^{−j−1} ≥ h, followed by the value of the cell at the origin.
/// The max over the full ball B(0, 2^{−j}) is the capped centre value for
/// every j, so growth is read off the annuli.
pub fn growth_profile(u: &ScalarField) -> Vec<GrowthRow> {
    let grid = u.grid();
    let h = grid.h();
    let radius = |c: usize| {
        let x = grid.cell_center(c);
        if grid.dim() == 1 {
            x[0].abs()
        } else {
            x[0].hypot(x[1])
        }
    };
    let mut rows: Vec<GrowthRow> = Vec::new();
    let mut j = 0;
    loop {
        let outer = 0.5f64.powi(j as i32);
        let inner = 0.5 * outer;
        if inner < h * (1.0 - 1e-12) {
            break;
        }
        let max = grid
            .active_cells()
            .filter(|&c| {
                let r = radius(c);
                r >= inner * (1.0 - 1e-12) && r < outer * (1.0 - 1e-12)
            })
            .map(|c| u.values()[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            let ratio = rows.last().map(|p| max / p.max);
            rows.push(GrowthRow { j, radius: outer, max, ratio, capped: false });
        }
        j += 1;
    }
    let centre = grid.active_cells().filter(|&c| radius(c) < 0.5 * h).map(|c| u.values()[c]).fold(f64::NEG_INFINITY, f64::max);
    if centre.is_finite() {
        let ratio = rows.last().map(|p| centre / p.max);
        rows.push(GrowthRow { j, radius: 0.5 * h, max: centre, ratio, capped: true });
    }
    rows
}

/// Per stamp and cell: the max over the 3×3 neighbourhood (active cells)
/// and the stamps in [t − θh, t], widened to whole steps; for a list of θ
/// the pointwise minimum of these maxima.
pub fn semicontinuous_envelope(u: &TimeSeries<ScalarField>, thetas: &[f64]) -> Result<TimeSeries<ScalarField>> {
    if thetas.is_empty() || thetas.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParam("thetas must be a nonempty list of positive values".into()));
    }
    let grid = u.grid();
    let times = u.times();
    let [nx, ny] = grid.cells();
    let ny = if grid.dim() == 1 { 1 } else { ny };
    // spatial 3×3 max per frame
    let spatial: Vec<Vec<f64>> = u
        .frames()
        .iter()
        .map(|f| {
            let v = f.values();
            let mut out = v.to_vec();
            for c in grid.active_cells() {
                let (i, j) = grid.cell_ij(c);
                let mut m = v[c];
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                            continue;
                        }
                        let d = grid.cell_index(ii as usize, jj as usize);
                        if grid.is_active(d) {
                            m = m.max(v[d]);
                        }
                    }
                }
                out[c] = m;
            }
            out
        })
        .collect();
    let mut frames = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mut best = vec![f64::INFINITY; grid.n_cells()];
        for &theta in thetas {
            let start = times[k] - theta * grid.h();
            let lo = times[..=k].partition_point(|&t| t <= start + 1e-12).saturating_sub(1);
            for c in grid.active_cells() {
                let m = (lo..=k).map(|j| spatial[j][c]).fold(f64::NEG_INFINITY, f64::max);
                best[c] = best[c].min(m);
            }
        }
        for c in 0..grid.n_cells() {
            if !grid.is_active(c) {
                best[c] = 0.0;
            }
        }
        frames.push(ScalarField::new(grid.clone(), best)?);
    }
    TimeSeries::new(times.to_vec(), frames)
}

pub fn write_level_csv<W: Write>(mut w: W, table: &[LevelRow]) -> Result<()> {
    writeln!(w, "i,k_i,rho_i,Y_i,cells_above_level")?;
    for r in table {
        writeln!(w, "{},{},{},{},{}", r.i, r.k_i, r.rho_i, r.y_i, r.cells_above)?;
    }
    Ok(())
}

pub fn write_growth_csv<W: Write>(mut w: W, rows: &[GrowthRow]) -> Result<()> {
    writeln!(w, "j,radius,max,ratio,capped")?;
    for r in rows {
        let ratio = r.ratio.map_or(String::new(), |x| x.to_string());
        writeln!(w, "{},{},{},{},{}", r.j, r.radius, r.max, ratio, r.capped)?;
    }
    Ok(())
}

impl SupBound {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> GridSpec {
        GridSpec::new_1d(n, 1.0 / n as f64, 0.0).unwrap()
    }

    fn series(g: &GridSpec, nt: usize, dt: f64, f: impl Fn([f64; 2], f64) -> f64) -> TimeSeries<ScalarField> {
        let times: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();
        let frames = times.iter().map(|&t| ScalarField::from_fn(g, |x| f(x, t))).collect();
        TimeSeries::new(times, frames).unwrap()
    }

    #[test]
    fn cutoff_is_one_on_the_inner_half() {
        let cyl = Cylinder::new([0.0, 0.0], 1.0, 0.4, 1.0).unwrap();
        assert_eq!(standard_cutoff(&cyl, [0.1, 0.0], 1.0, 2), 1.0);
        assert_eq!(standard_cutoff(&cyl, [0.5, 0.0], 1.0, 2), 0.0);
        assert_eq!(standard_cutoff(&cyl, [0.0, 0.0], 0.6, 2), 0.0);
    }

    #[test]
    fn energy_terms_vanish_below_the_level() {
        let g = line(100);
        let u = series(&g, 10, 0.01, |x, t| x[0] - t);
        let cyl = Cylinder::new([0.5, 0.0], 0.1, 0.2, 0.5).unwrap();
        let e = energy_estimate_terms(&u, 5.0, 1.0, |x, t| standard_cutoff(&cyl, x, t, 1), &cyl).unwrap();
        assert_eq!(e.lhs, 0.0);
        assert_eq!(e.rhs[0], 0.0);
        assert_eq!(e.rhs[1], 0.0);
        assert_eq!(e.rhs[2], 0.0);
    }

    #[test]
    fn cylinder_outside_the_domain_is_rejected() {
        let g = line(100);
        let u = series(&g, 10, 0.01, |_, _| 0.0);
        let near_edge = Cylinder::new([0.05, 0.0], 0.1, 0.1, 0.5).unwrap();
        assert!(matches!(near_edge.check_inside(&g, u.times()), Err(Error::CylinderOutOfDomain(_))));
        let too_long = Cylinder::new([0.5, 0.0], 0.05, 0.1, 1.0).unwrap();
        assert!(matches!(too_long.check_inside(&g, u.times()), Err(Error::CylinderOutOfDomain(_))));
        let late = Cylinder::new([0.5, 0.0], 0.2, 0.1, 0.5).unwrap();
        assert!(late.check_inside(&g, u.times()).is_err());
    }

    #[test]
    fn stamps_widen_to_whole_steps() {
        let times = [0.0, 0.1, 0.2, 0.3, 0.4];
        let cyl = Cylinder::new([0.0, 0.0], 0.35, 0.1, 1.5).unwrap();
        // (0.2, 0.35) widens to stamps 0.2..0.4
        assert_eq!(cyl.stamps(&times).unwrap(), (2, 4));
        let exact = Cylinder::new([0.0, 0.0], 0.3, 0.1, 1.0).unwrap();
        assert_eq!(exact.stamps(&times).unwrap(), (2, 3));
    }

    #[test]
    fn constant_field_bound_is_the_formula() {
        let g = line(100);
        let u = series(&g, 10, 0.01, |_, _| 0.7);
        let cyl = Cylinder::new([0.5, 0.0], 0.1, 0.2, 0.5).unwrap();
        let cfg = DeGiorgiConfig { k0: 0.7, xi: 0.5, r: 3.0, alpha: 1.0, c_cal: 2.0, max_levels: 10 };
        let sb = degiorgi_supbound(&u, &cyl, &cfg).unwrap();
        let expect = 0.7 + 0.2 + 0.25 + 2.0 * degiorgi_factor(1, 0.5, 0.5, 3.0) * (0.1f64).powf(0.5);
        assert!((sb.bound - expect).abs() < 1e-14);
        assert!(sb.sound);
        assert_eq!(sb.average, 0.0);
        assert_eq!(sb.status, IterationStatus::Converged);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = DeGiorgiConfig { k0: 0.0, xi: 0.5, r: 2.0, alpha: 1.0, c_cal: 1.0, max_levels: 10 };
        assert!(cfg.validate(2).is_err());
        cfg.r = 3.0;
        assert!(cfg.validate(2).is_ok());
        cfg.alpha = 0.5;
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn unbounded_example_values() {
        let g = GridSpec::new_2d(5, 5, 0.5, [-1.25, -1.25]).unwrap();
        let u = unbounded_example(2, &g, 0.0).unwrap();
        let c = g.locate(&[0.5, 0.0]);
        assert_eq!(u.values()[c], 2.0);
        assert_eq!(u.values()[g.locate(&[0.0, 0.0])], 4.0);
        let late = unbounded_example(2, &g, 1.2).unwrap();
        assert!(late.values().iter().all(|&v| v == 0.0));
        assert!(unbounded_example(1, &g, 0.0).is_err());
    }

    #[test]
    fn growth_profile_doubles() {
        let h = 1.0 / 64.0;
        let g = GridSpec::new_2d(129, 129, h, [-64.5 * h; 2]).unwrap();
        let rows = growth_profile(&unbounded_example(2, &g, 0.0).unwrap());
        assert!(rows.last().unwrap().capped);
        for r in &rows[1..] {
            assert_eq!(r.ratio, Some(2.0));
        }
    }

    #[test]
    fn fast_geometric_threshold_separates() {
        let (c, b, beta) = (2.0, 4.0, 0.5);
        let th = fast_geometric_threshold(c, b, beta);
        let below = fast_geometric(0.9 * th, c, b, beta, 60);
        assert!(below.last().unwrap().abs() < 1e-300 || *below.last().unwrap() == 0.0);
        let above = fast_geometric(1.1 * th, c, b, beta, 60);
        assert!(above.last().unwrap() > &above[0]);
    }

    #[test]
    fn envelope_of_constant_and_step() {
        let g = line(20);
        let c = series(&g, 4, 0.1, |_, _| 3.0);
        let e = semicontinuous_envelope(&c, &[1.0]).unwrap();
        assert_eq!(e.frames(), c.frames());
        let step = series(&g, 4, 0.1, |x, _| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let e = semicontinuous_envelope(&step, &[1.0]).unwrap();
        let f = e.frame(2).values();
        // cell 10 is the first zero cell; its stencil sees the 1 on the left
        assert_eq!(f[10], 1.0);
        assert_eq!(f[11], 0.0);
        assert_eq!(f[9], 1.0);
    }

    #[test]
    fn envelope_window_reaches_back_in_time() {
        let g = line(10);
        // u = 1 only at the first stamp
        let u = series(&g, 4, 0.1, |_, t| if t == 0.0 { 1.0 } else { 0.0 });
        // θh = 1.0·0.1 covers one step back
        let e = semicontinuous_envelope(&u, &[1.0]).unwrap();
        assert_eq!(e.frame(1).values()[5], 1.0);
        assert_eq!(e.frame(2).values()[5], 0.0);
        assert!(semicontinuous_envelope(&u, &[]).is_err());
    }

    #[test]
    fn level_csv_has_header() {
        let mut buf = Vec::new();
        write_level_csv(&mut buf, &[LevelRow { i: 0, k_i: 1.0, rho_i: 0.5, y_i: 0.25, cells_above: 3 }]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "i,k_i,rho_i,Y_i,cells_above_level\n0,1,0.5,0.25,3\n");
    }

    proptest! {
        #[test]
        fn level_arithmetic_is_dyadic(k0 in -2.0f64..2.0, amp in 0.1f64..5.0, rho in 0.05f64..0.2) {
            let g = line(64);
            let u = series(&g, 8, 0.05, |x, t| k0 + amp * (6.0 * x[0] + t).sin());
            let cyl = Cylinder::new([0.5, 0.0], 0.4, rho, 1.0).unwrap();
            let cfg = DeGiorgiConfig { k0, xi: 0.3, r: 3.0, alpha: 1.0, c_cal: 0.0, max_levels: 30 };
            let sb = degiorgi_supbound(&u, &cyl, &cfg).unwrap();
            for w in sb.table.windows(2) {
                let step = 0.5f64.powi(w[0].i as i32 + 1) * sb.k;
                prop_assert!((w[1].k_i - w[0].k_i - step).abs() <= 1e-15 * (1.0 + sb.k.abs() + k0.abs()));
                prop_assert!(w[1].rho_i < w[0].rho_i);
            }
            for row in &sb.table {
                prop_assert!(row.rho_i >= 0.5 * rho && row.rho_i <= rho);
                prop_assert!(row.y_i >= 0.0);
            }
        }

        #[test]
        fn envelope_dominates(vals in proptest::collection::vec(-3.0f64..3.0, 30), theta in 0.1f64..3.0) {
            let g = line(10);
            let frames = vals.chunks(10).map(|c| ScalarField::new(g.clone(), c.to_vec()).unwrap()).collect();
            let u = TimeSeries::new(vec![0.0, 0.1, 0.2], frames).unwrap();
            let e = semicontinuous_envelope(&u, &[theta]).unwrap();
            let ee = semicontinuous_envelope(&e, &[theta]).unwrap();
            for k in 0..3 {
                for c in 0..10 {
                    prop_assert!(e.frame(k).values()[c] >= u.frame(k).values()[c]);
                    prop_assert!(ee.frame(k).values()[c] >= e.frame(k).values()[c]);
                }
            }
        }
    }
}
