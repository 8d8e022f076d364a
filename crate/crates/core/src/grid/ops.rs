use super::{BoundaryTrace, DualField, GridSpec, Gridded, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::lagrangian::LagrangianSpec;

/// Forward differences across interior faces.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid();
    let inv_h = 1.0 / g.h();
    let uv = u.values();
    let mut out = vec![0.0; g.n_faces()];
    for (f, o) in out.iter_mut().enumerate() {
        if g.face_active(f) {
            let (a, b) = g.face_cells(f);
            *o = (uv[b] - uv[a]) * inv_h;
        }
    }
    VectorField::from_raw(g.clone(), out)
}

/// Negative h-weighted adjoint of [`gradient`], zero-padded at the boundary.
pub fn divergence(z: &VectorField) -> ScalarField {
    let g = z.grid();
    let inv_h = 1.0 / g.h();
    let mut out = vec![0.0; g.n_cells()];
    for (f, &zf) in z.values().iter().enumerate() {
        if g.face_active(f) {
            let (a, b) = g.face_cells(f);
            out[a] += zf * inv_h;
            out[b] -= zf * inv_h;
        }
    }
    ScalarField::from_raw(g.clone(), out)
}

/// Quadrant gradients ξ_{c,s} built from face differences.
pub fn quadrant_gradient(u: &ScalarField) -> DualField {
    quadrant_select(&gradient(u))
}

/// Lift face values to quadrants (the selection operator S).
pub fn quadrant_select(d: &VectorField) -> DualField {
    let g = d.grid();
    let (n, nq) = (g.dim(), g.n_quadrants());
    let dv = d.values();
    let mut out = DualField::zeros(g);
    let vals = out.values_mut();
    for c in g.active_cells() {
        for s in 0..nq {
            for a in 0..n {
                if let Some(f) = g.quadrant_face(c, s, a) {
                    vals[(c * nq + s) * n + a] = dv[f];
                }
            }
        }
    }
    out
}

/// Face flux Z with ⟨Z, d⟩ = Σ_q w_q p_q·(S d)_q for every face field d:
/// the average of the 2^n quadrant vectors that see each face.
pub fn face_flux(p: &DualField) -> VectorField {
    let g = p.grid();
    let (n, nq) = (g.dim(), g.n_quadrants());
    let pv = p.values();
    let inv = 1.0 / nq as f64;
    let mut out = vec![0.0; g.n_faces()];
    for (f, o) in out.iter_mut().enumerate() {
        if !g.face_active(f) {
            continue;
        }
        let a = g.face_axis(f);
        let (lo, hi) = g.face_cells(f);
        let mut acc = 0.0;
        for s in 0..nq {
            if (s >> a) & 1 == 1 {
                acc += pv[(lo * nq + s) * n + a];
            } else {
                acc += pv[(hi * nq + s) * n + a];
            }
        }
        *o = acc * inv;
    }
    VectorField::from_raw(g.clone(), out)
}

/// Σ_c Σ_s (h^n / 2^n) f(x_c, ξ_{c,s}).
pub fn f_integral(spec: &LagrangianSpec, u: &ScalarField) -> f64 {
    let g = u.grid();
    let xi = quadrant_gradient(u);
    let nq = g.n_quadrants();
    let mut s = 0.0;
    for c in g.active_cells() {
        let pi = spec.at_cell(g, c);
        for q in 0..nq {
            s += pi.eval(xi.get(c, q));
        }
    }
    s * g.quadrant_weight()
}

/// Isotropic total variation; in 1D exactly Σ_faces h |∇u|.
pub fn total_variation(u: &ScalarField) -> f64 {
    f_integral(&LagrangianSpec::total_variation(), u)
}

pub fn area_functional(u: &ScalarField) -> f64 {
    f_integral(&LagrangianSpec::area(), u)
}

/// Piecewise-constant trace: each boundary face takes its cell's value.
pub fn trace(u: &ScalarField) -> BoundaryTrace {
    let g = u.grid();
    let v = g.boundary_faces().iter().map(|b| u.values()[b.cell]).collect();
    BoundaryTrace::new(g.clone(), v).expect("field values are finite")
}

/// Σ_b h^(n-1) |t1 − t2| f^∞(x_b, ν_b), with x_b the adjacent cell.
pub fn boundary_integral(t1: &BoundaryTrace, t2: &BoundaryTrace, spec: &LagrangianSpec) -> Result<f64> {
    if t1.grid() != t2.grid() {
        return Err(Error::GridMismatch);
    }
    let g = t1.grid();
    let mut s = 0.0;
    for (k, b) in g.boundary_faces().iter().enumerate() {
        let d = (t1.values()[k] - t2.values()[k]).abs();
        if d != 0.0 {
            s += d * spec.at_cell(g, b.cell).recession(b.normal);
        }
    }
    Ok(s * g.face_area())
}

/// Weight h^(n-1) f^∞(x_b, ν_b) of each boundary face.
pub fn boundary_weights(g: &GridSpec, spec: &LagrangianSpec) -> Vec<f64> {
    let fa = g.face_area();
    g.boundary_faces()
        .iter()
        .map(|b| fa * spec.at_cell(g, b.cell).recession(b.normal))
        .collect()
}

/// |⟨u, div z⟩ + ⟨z, ∇u⟩ − Σ_b h^(n-1) zb_b Tu_b|.
pub fn gauss_green_residual(u: &ScalarField, z: &VectorField, zb: &BoundaryTrace) -> Result<f64> {
    if u.grid() != z.grid() || u.grid() != zb.grid() {
        return Err(Error::GridMismatch);
    }
    let g = u.grid();
    let a = u.inner(&divergence(z))?;
    let b = z.inner(&gradient(u))?;
    let tu = trace(u);
    let bs: f64 = tu.values().iter().zip(zb.values()).map(|(t, z)| t * z).sum::<f64>() * g.face_area();
    Ok((a + b - bs).abs())
}

/// Pointwise min of two fields.
pub fn field_min(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.zip_map(b, f64::min)
}

/// Pointwise max of two fields.
pub fn field_max(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.zip_map(b, f64::max)
}
