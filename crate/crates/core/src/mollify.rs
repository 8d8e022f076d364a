//! Exponential time mollification u^δ(t) = e^{−t/δ} w + (1/δ)∫₀ᵗ e^{(s−t)/δ} u(s) ds
//! and the reporters built on it.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{area_functional, trace, trapezoid, Gridded, ScalarField, TimeSeries};

#[derive(Clone, Debug)]
pub struct MollifyConfig {
    pub delta: f64,
    pub seed: ScalarField,
}

/// Exact exponential recurrence with a trapezoid average of u per step:
/// u^δ_{k+1} = e^{−Δt/δ} u^δ_k + (1 − e^{−Δt/δ}) (u_k + u_{k+1})/2, u^δ_0 = seed.
pub fn exp_mollify(u: &TimeSeries<ScalarField>, cfg: &MollifyConfig) -> Result<TimeSeries<ScalarField>> {
    if u.is_empty() {
        return Err(Error::EmptySeries);
    }
    if !(cfg.delta > 0.0) || !cfg.delta.is_finite() {
        return Err(Error::InvalidParam(format!("delta must be positive, got {}", cfg.delta)));
    }
    if cfg.seed.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    let t = u.times();
    let mut frames = Vec::with_capacity(u.len());
    frames.push(cfg.seed.clone());
    for k in 0..u.len() - 1 {
        let e = (-(t[k + 1] - t[k]) / cfg.delta).exp();
        let (a, b) = (u.frame(k).values(), u.frame(k + 1).values());
        let prev = frames[k].values();
        let next: Vec<f64> = (0..prev.len())
            .map(|c| e * prev[c] + (1.0 - e) * 0.5 * (a[c] + b[c]))
            .collect();
        frames.push(ScalarField::new(u.grid().clone(), next)?);
    }
    TimeSeries::new(t.to_vec(), frames)
}

fn check_matching(u: &TimeSeries<ScalarField>, v: &TimeSeries<ScalarField>) -> Result<()> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    if u.times() != v.times() {
        return Err(Error::ShapeMismatch("time stamps differ".into()));
    }
    Ok(())
}

/// max over interior stamps of ‖(u^δ_{k+1} − u^δ_{k−1})/(t_{k+1} − t_{k−1}) − (u_k − u^δ_k)/δ‖_{L²}.
pub fn derivative_identity_residual(
    u: &TimeSeries<ScalarField>,
    udelta: &TimeSeries<ScalarField>,
    delta: f64,
) -> Result<f64> {
    check_matching(u, udelta)?;
    let g = u.grid();
    let t = u.times();
    let mut worst: f64 = 0.0;
    for k in 1..u.len().saturating_sub(1) {
        let dt = t[k + 1] - t[k - 1];
        let (up, um) = (udelta.frame(k + 1).values(), udelta.frame(k - 1).values());
        let (uk, dk) = (u.frame(k).values(), udelta.frame(k).values());
        let mut s = 0.0;
        for c in g.active_cells() {
            let r = (up[c] - um[c]) / dt - (uk[c] - dk[c]) / delta;
            s += r * r;
        }
        worst = worst.max((s * g.cell_volume()).sqrt());
    }
    Ok(worst)
}

/// ∫∫_{0<s<t} δ⁻¹ e^{−s/δ} ‖Tu(t−s) − Tu(t)‖_{L¹(∂Ω)} ds dt.
///
/// The kernel is integrated exactly over each step, the trace difference is
/// averaged at the step ends, and the outer integral uses the trapezoid rule.
pub fn trace_mollification_gap(u: &TimeSeries<ScalarField>, delta: f64) -> f64 {
    let t = u.times();
    let traces: Vec<_> = u.frames().iter().map(trace).collect();
    let fa = u.grid().face_area();
    let dist = |i: usize, j: usize| -> f64 {
        traces[i]
            .values()
            .iter()
            .zip(traces[j].values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * fa
    };
    let mut outer = vec![0.0; u.len()];
    for k in 1..u.len() {
        let mut acc = 0.0;
        for j in 0..k {
            let w = (-(t[k] - t[j + 1]) / delta).exp() - (-(t[k] - t[j]) / delta).exp();
            acc += w * 0.5 * (dist(j, k) + dist(j + 1, k));
        }
        outer[k] = acc;
    }
    trapezoid(t, &outer)
}

/// ‖u‖_{L²(Ω_T)} + √δ‖seed‖_{L²(Ω)} − ‖u^δ‖_{L²(Ω_T)}; nonnegative when the
/// contraction estimate holds.
pub fn contraction_slack(
    u: &TimeSeries<ScalarField>,
    udelta: &TimeSeries<ScalarField>,
    seed: &ScalarField,
    delta: f64,
) -> f64 {
    u.l2_space_time() + delta.sqrt() * seed.l2_norm() - udelta.l2_space_time()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AreaStrictRow {
    pub delta: f64,
    pub l1_gap: f64,
    pub area_gap: f64,
    pub trace_gap: f64,
}

/// One row per δ: L¹(Ω_T) distance, area-functional gap and trace
/// mollification gap.
pub fn area_strict_report(
    u: &TimeSeries<ScalarField>,
    deltas: &[f64],
    seed: &ScalarField,
) -> Result<Vec<AreaStrictRow>> {
    if deltas.iter().any(|&d| !(d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParam("deltas must be positive and strictly decreasing".into()));
    }
    let t = u.times();
    let area_u: Vec<f64> = u.frames().iter().map(area_functional).collect();
    let total_area_u = trapezoid(t, &area_u);
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let ud = exp_mollify(u, &MollifyConfig { delta, seed: seed.clone() })?;
        let l1: Vec<f64> = (0..u.len())
            .map(|k| ud.frame(k).zip_map(u.frame(k), |a, b| a - b).map(|d| d.l1_norm()))
            .collect::<Result<_>>()?;
        let area_d: Vec<f64> = ud.frames().iter().map(area_functional).collect();
        rows.push(AreaStrictRow {
            delta,
            l1_gap: trapezoid(t, &l1),
            area_gap: (trapezoid(t, &area_d) - total_area_u).abs(),
            trace_gap: trace_mollification_gap(u, delta),
        });
    }
    Ok(rows)
}

pub fn write_area_strict_csv<W: Write>(mut w: W, rows: &[AreaStrictRow]) -> Result<()> {
    writeln!(w, "delta,l1_gap,area_gap,trace_gap")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.delta, r.l1_gap, r.area_gap, r.trace_gap)?;
    }
    Ok(())
}
