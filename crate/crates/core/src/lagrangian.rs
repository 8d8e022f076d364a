//! Linear-growth integrands f(x, ξ).
//!
//! Every supported kind reduces, at a fixed point x, to
//! f(ξ) = √(c0² + N(ξ)²) with a norm N (weighted Euclidean or weighted l1)
//! and c0 ≥ 0. TV is (|·|, 0), Area is (|·|, 1) and regularizing by μ maps
//! c0 to √(c0² + μ²). [`PointIntegrand`] is that reduced form; the closed-form
//! conjugate is −c0·√(1 − N°(z)²) on the dual unit ball and +∞ outside.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{Gridded, ScalarField};

/// Slack on the dual-ball membership test so that exact projections onto
/// the ball are not flagged infeasible by rounding.
pub const DUAL_SLACK: f64 = 1e-12;

/// Extended real used for conjugates and Fenchel gaps.
#[derive(Clone, Copy, Debug)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
}

impl ExtReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// `f64` view; `PosInfinity` maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::PosInfinity => f64::INFINITY,
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::PosInfinity
        } else {
            ExtReal::Finite(v)
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
}

impl PartialEq for ExtReal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for ExtReal {}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.total_cmp(b),
            (ExtReal::Finite(_), ExtReal::PosInfinity) => Ordering::Less,
            (ExtReal::PosInfinity, ExtReal::Finite(_)) => Ordering::Greater,
            (ExtReal::PosInfinity, ExtReal::PosInfinity) => Ordering::Equal,
        }
    }
}

impl std::ops::Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::PosInfinity,
        }
    }
}

impl std::fmt::Display for ExtReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInfinity => write!(f, "inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::PosInfinity => s.serialize_str("inf"),
        }
    }
}

/// The norm part N of the reduced integrand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    /// w·|ξ|
    Euclid { w: f64 },
    /// Σ a_j |ξ_j|
    L1 { a: [f64; 2] },
}

impl Norm {
    #[inline]
    pub fn eval(&self, xi: [f64; 2]) -> f64 {
        match *self {
            Norm::Euclid { w } => w * xi[0].hypot(xi[1]),
            Norm::L1 { a } => a[0] * xi[0].abs() + a[1] * xi[1].abs(),
        }
    }

    /// Dual norm N°(z).
    #[inline]
    pub fn dual(&self, z: [f64; 2]) -> f64 {
        match *self {
            Norm::Euclid { w } => z[0].hypot(z[1]) / w,
            Norm::L1 { a } => (z[0].abs() / a[0]).max(z[1].abs() / a[1]),
        }
    }

    /// prox of t·N at x.
    #[inline]
    pub fn prox(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match *self {
            Norm::Euclid { w } => {
                let r = x[0].hypot(x[1]);
                let thr = t * w;
                if r <= thr {
                    [0.0, 0.0]
                } else {
                    let s = 1.0 - thr / r;
                    [x[0] * s, x[1] * s]
                }
            }
            Norm::L1 { a } => {
                let shrink = |v: f64, thr: f64| v.signum() * (v.abs() - thr).max(0.0);
                [shrink(x[0], t * a[0]), shrink(x[1], t * a[1])]
            }
        }
    }

    /// Euclidean projection onto the dual unit ball {N° ≤ 1}.
    #[inline]
    pub fn project_dual_ball(&self, z: [f64; 2]) -> [f64; 2] {
        match *self {
            Norm::Euclid { w } => {
                let r = z[0].hypot(z[1]);
                if r <= w {
                    z
                } else {
                    let s = w / r;
                    [z[0] * s, z[1] * s]
                }
            }
            Norm::L1 { a } => [z[0].clamp(-a[0], a[0]), z[1].clamp(-a[1], a[1])],
        }
    }

    fn bounds(&self, dim: usize) -> (f64, f64) {
        match *self {
            Norm::Euclid { w } => (w, w),
            Norm::L1 { a } => {
                let a = &a[..dim];
                let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = a.iter().cloned().fold(0.0, f64::max);
                (lo, (dim as f64).sqrt() * hi)
            }
        }
    }
}

/// f(x0, ·) = √(c0² + N(·)²) at a fixed point x0. Vectors are padded to
/// two components; in 1D the second component is always zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointIntegrand {
    pub norm: Norm,
    pub c0: f64,
    pub dim: usize,
}

impl PointIntegrand {
    #[inline]
    pub fn eval(&self, xi: [f64; 2]) -> f64 {
        let n = self.norm.eval(xi);
        if self.c0 == 0.0 {
            n
        } else {
            self.c0.hypot(n)
        }
    }

    #[inline]
    pub fn recession(&self, xi: [f64; 2]) -> f64 {
        self.norm.eval(xi)
    }

    /// Gradient in ξ, `None` at a kink.
    pub fn grad(&self, xi: [f64; 2]) -> Option<[f64; 2]> {
        let n = self.norm.eval(xi);
        if n == 0.0 {
            return if self.c0 > 0.0 { Some([0.0, 0.0]) } else { None };
        }
        let ratio = if self.c0 == 0.0 { 1.0 } else { n / self.c0.hypot(n) };
        match self.norm {
            Norm::Euclid { w } => {
                let r = xi[0].hypot(xi[1]);
                let s = ratio * w / r;
                Some([xi[0] * s, xi[1] * s])
            }
            Norm::L1 { a } => {
                let mut g = [0.0; 2];
                for j in 0..self.dim {
                    if xi[j] == 0.0 {
                        return None;
                    }
                    g[j] = ratio * a[j] * xi[j].signum();
                }
                Some(g)
            }
        }
    }

    /// Hessian in ξ for the smooth Euclidean case (c0 > 0).
    pub fn hessian(&self, xi: [f64; 2]) -> Option<[[f64; 2]; 2]> {
        match self.norm {
            Norm::Euclid { w } if self.c0 > 0.0 => {
                let f = self.eval(xi);
                let w2 = w * w;
                let s = w2 / f;
                let t = w2 / (f * f);
                Some([
                    [s * (1.0 - t * xi[0] * xi[0]), -s * t * xi[0] * xi[1]],
                    [-s * t * xi[1] * xi[0], s * (1.0 - t * xi[1] * xi[1])],
                ])
            }
            _ => None,
        }
    }

    #[inline]
    pub fn conjugate(&self, z: [f64; 2]) -> ExtReal {
        let d = self.norm.dual(z);
        if d > 1.0 + DUAL_SLACK {
            ExtReal::PosInfinity
        } else if self.c0 == 0.0 {
            ExtReal::Finite(0.0)
        } else {
            ExtReal::Finite(-self.c0 * (1.0 - d * d).max(0.0).sqrt())
        }
    }

    #[inline]
    pub fn fenchel_gap(&self, xi: [f64; 2], z: [f64; 2]) -> ExtReal {
        match self.conjugate(z) {
            ExtReal::PosInfinity => ExtReal::PosInfinity,
            ExtReal::Finite(c) => {
                ExtReal::Finite(self.eval(xi) + c - (z[0] * xi[0] + z[1] * xi[1]))
            }
        }
    }

    /// prox of σ·f* at y.
    pub fn prox_conjugate(&self, sigma: f64, y: [f64; 2]) -> [f64; 2] {
        if self.c0 == 0.0 {
            return self.norm.project_dual_ball(y);
        }
        if let Norm::Euclid { w } = self.norm {
            return prox_conjugate_radial(w, self.c0, sigma, y);
        }
        self.prox_conjugate_bisect(sigma, y)
    }

    fn prox_conjugate_bisect(&self, sigma: f64, y: [f64; 2]) -> [f64; 2] {
        // Moreau: prox_{σf*}(y) = y − σ·prox_{f/σ}(y/σ), and prox_{f/σ}(x)
        // = prox_{(t/σ)N}(x) where t = N/f at the result; t solved by bisection.
        let x = [y[0] / sigma, y[1] / sigma];
        let c0 = self.c0;
        let psi = |t: f64| {
            let xi = self.norm.prox(x, t / sigma);
            let n = self.norm.eval(xi);
            n / c0.hypot(n) - t
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if psi(0.0) <= 0.0 {
            hi = 0.0;
        } else {
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if psi(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
        }
        let xi = self.norm.prox(x, hi / sigma);
        let p = [y[0] - sigma * xi[0], y[1] - sigma * xi[1]];
        // guard against rounding pushing p just outside the ball
        self.norm.project_dual_ball(p)
    }
}

// Radial case: z = s·w·ŷ with s(1 + a/√(1−s²)) = b, a = σc0/w², b = |y|/w.
// The left side is convex and increasing, so Newton from an upper bound
// decreases monotonically to the root.
fn prox_conjugate_radial(w: f64, c0: f64, sigma: f64, y: [f64; 2]) -> [f64; 2] {
    let r = y[0].hypot(y[1]);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let a = sigma * c0 / (w * w);
    let b = r / w;
    let mut s = b.min(b / a.hypot(b));
    for _ in 0..100 {
        let q = ((1.0 - s) * (1.0 + s)).sqrt();
        if q <= 0.0 {
            break;
        }
        let phi = s * (1.0 + a / q) - b;
        let dphi = 1.0 + a / (q * q * q);
        let next = (s - phi / dphi).max(0.0);
        if next >= s {
            break;
        }
        let done = s - next <= 1e-16 * s.max(1e-300);
        s = next;
        if done {
            break;
        }
    }
    let k = s * w / r;
    [y[0] * k, y[1] * k]
}

#[derive(Clone, Debug)]
pub enum LagrangianKind {
    TotalVariation,
    Area,
    WeightedTV(Arc<ScalarField>),
    AnisotropicTV(Vec<f64>),
    Regularized { inner: Box<LagrangianKind>, mu: f64 },
}

impl LagrangianKind {
    fn c0(&self) -> f64 {
        match self {
            LagrangianKind::Area => 1.0,
            LagrangianKind::Regularized { inner, mu } => inner.c0().hypot(*mu),
            _ => 0.0,
        }
    }

    fn base(&self) -> &LagrangianKind {
        match self {
            LagrangianKind::Regularized { inner, .. } => inner.base(),
            k => k,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LagrangianKind::TotalVariation => "tv".into(),
            LagrangianKind::Area => "area".into(),
            LagrangianKind::WeightedTV(_) => "weighted_tv".into(),
            LagrangianKind::AnisotropicTV(_) => "anisotropic_tv".into(),
            LagrangianKind::Regularized { inner, mu } => format!("regularized({}, {mu})", inner.name()),
        }
    }
}

/// An integrand together with its linear-growth constants λ and Λ.
#[derive(Clone, Debug)]
pub struct LagrangianSpec {
    kind: LagrangianKind,
    lambda: f64,
    big_lambda: f64,
}

impl LagrangianSpec {
    pub fn new(kind: LagrangianKind) -> Result<Self> {
        validate_kind(&kind)?;
        let (lam_n, big_n) = match kind.base() {
            LagrangianKind::TotalVariation | LagrangianKind::Area => (1.0, 1.0),
            LagrangianKind::WeightedTV(w) => {
                let lo = w.values().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = w.values().iter().cloned().fold(0.0, f64::max);
                (lo, hi)
            }
            LagrangianKind::AnisotropicTV(a) => {
                Norm::L1 { a: pad_weights(a) }.bounds(a.len())
            }
            LagrangianKind::Regularized { .. } => unreachable!(),
        };
        let c0 = kind.c0();
        Ok(LagrangianSpec {
            kind,
            lambda: lam_n,
            big_lambda: big_n.max(c0),
        })
    }

    pub fn total_variation() -> Self {
        Self::new(LagrangianKind::TotalVariation).unwrap()
    }

    pub fn area() -> Self {
        Self::new(LagrangianKind::Area).unwrap()
    }

    pub fn weighted_tv(w: ScalarField) -> Result<Self> {
        Self::new(LagrangianKind::WeightedTV(Arc::new(w)))
    }

    pub fn anisotropic_tv(a: Vec<f64>) -> Result<Self> {
        Self::new(LagrangianKind::AnisotropicTV(a))
    }

    pub fn kind(&self) -> &LagrangianKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    /// Outer regularization parameter (0 if not regularized).
    pub fn mu(&self) -> f64 {
        match &self.kind {
            LagrangianKind::Regularized { mu, .. } => *mu,
            _ => 0.0,
        }
    }

    pub fn c0(&self) -> f64 {
        self.kind.c0()
    }

    /// The spec with all `Regularized` layers stripped.
    pub fn unregularized(&self) -> LagrangianSpec {
        LagrangianSpec::new(self.kind.base().clone()).expect("base kind already validated")
    }

    /// Smooth everywhere in ξ: Euclidean norm with c0 > 0.
    pub fn is_differentiable(&self) -> bool {
        self.c0() > 0.0 && !matches!(self.kind.base(), LagrangianKind::AnisotropicTV(_))
    }

    /// Dimension the spec is tied to, if any (anisotropic weights, weight field).
    pub fn required_dim(&self) -> Option<usize> {
        match self.kind.base() {
            LagrangianKind::AnisotropicTV(a) => Some(a.len()),
            LagrangianKind::WeightedTV(w) => Some(w.grid().dim()),
            _ => None,
        }
    }

    fn norm_with_weight(&self, w: f64) -> Norm {
        match self.kind.base() {
            LagrangianKind::AnisotropicTV(a) => Norm::L1 { a: pad_weights(a) },
            _ => Norm::Euclid { w },
        }
    }

    fn dim_hint(&self, x_len: usize) -> usize {
        self.required_dim().unwrap_or(x_len.clamp(1, 2))
    }

    /// Reduced integrand at the point x (weights sampled in the containing cell).
    pub fn at(&self, x: &[f64]) -> PointIntegrand {
        let w = match self.kind.base() {
            LagrangianKind::WeightedTV(field) => field.value_at_point(x),
            _ => 1.0,
        };
        PointIntegrand {
            norm: self.norm_with_weight(w),
            c0: self.c0(),
            dim: self.dim_hint(x.len()),
        }
    }

    /// Reduced integrand at a cell of `grid` (fast path for grid loops).
    pub fn at_cell(&self, grid: &crate::grid::GridSpec, cell: usize) -> PointIntegrand {
        let w = match self.kind.base() {
            LagrangianKind::WeightedTV(field) => {
                if field.grid() == grid {
                    field.values()[cell]
                } else {
                    field.value_at_point(&grid.cell_center(cell)[..grid.dim()])
                }
            }
            _ => 1.0,
        };
        PointIntegrand {
            norm: self.norm_with_weight(w),
            c0: self.c0(),
            dim: grid.dim(),
        }
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.at(x).eval(pad(xi))
    }

    pub fn recession(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.at(x).recession(pad(xi))
    }

    pub fn grad(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        match self.at(x).grad(pad(xi)) {
            Some(g) => Ok(g[..xi.len().max(1)].to_vec()),
            None => Err(Error::NotDifferentiable { xi: xi.to_vec() }),
        }
    }

    pub fn conjugate(&self, x: &[f64], z: &[f64]) -> ExtReal {
        self.at(x).conjugate(pad(z))
    }

    pub fn fenchel_gap(&self, x: &[f64], xi: &[f64], z: &[f64]) -> ExtReal {
        self.at(x).fenchel_gap(pad(xi), pad(z))
    }

    /// √(μ² + f²).
    pub fn regularize(&self, mu: f64) -> Result<LagrangianSpec> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParam(format!("mu must be positive and finite, got {mu}")));
        }
        if matches!(self.kind, LagrangianKind::Regularized { .. }) {
            return Err(Error::InvalidParam("spec is already regularized".into()));
        }
        LagrangianSpec::new(LagrangianKind::Regularized {
            inner: Box::new(self.kind.clone()),
            mu,
        })
    }
}

fn validate_kind(kind: &LagrangianKind) -> Result<()> {
    match kind {
        LagrangianKind::TotalVariation | LagrangianKind::Area => Ok(()),
        LagrangianKind::WeightedTV(w) => {
            if w.values().iter().all(|&v| v > 0.0 && v.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidParam("weights must be positive and finite".into()))
            }
        }
        LagrangianKind::AnisotropicTV(a) => {
            if a.is_empty() || a.len() > 2 {
                return Err(Error::InvalidParam(format!(
                    "axis_weights needs one entry per axis (1 or 2), got {}",
                    a.len()
                )));
            }
            if a.iter().all(|&v| v > 0.0 && v.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidParam("axis_weights must be positive and finite".into()))
            }
        }
        LagrangianKind::Regularized { inner, mu } => {
            if !(*mu >= 0.0) || !mu.is_finite() {
                return Err(Error::InvalidParam(format!("mu must be nonnegative, got {mu}")));
            }
            validate_kind(inner)
        }
    }
}

fn pad_weights(a: &[f64]) -> [f64; 2] {
    [a[0], if a.len() > 1 { a[1] } else { 1.0 }]
}

#[inline]
pub(crate) fn pad(v: &[f64]) -> [f64; 2] {
    match v.len() {
        0 => [0.0, 0.0],
        1 => [v[0], 0.0],
        _ => [v[0], v[1]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_forms() {
        let tv = LagrangianSpec::total_variation();
        assert_eq!(tv.eval(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(LagrangianSpec::area().eval(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        let r = tv.regularize(0.1).unwrap();
        assert!((r.eval(&[0.0, 0.0], &[0.0, 0.0]) - 0.1).abs() < 1e-15);
        let ra = LagrangianSpec::area().regularize(0.5).unwrap();
        assert!((ra.c0() - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn regularize_rejects_bad_mu() {
        let tv = LagrangianSpec::total_variation();
        assert!(matches!(tv.regularize(0.0), Err(Error::InvalidParam(_))));
        assert!(matches!(tv.regularize(-1.0), Err(Error::InvalidParam(_))));
        let r = tv.regularize(0.2).unwrap();
        assert!(r.regularize(0.1).is_err());
    }

    #[test]
    fn prox_conjugate_is_feasible_and_fixed_inside() {
        let p = LagrangianSpec::total_variation().regularize(0.3).unwrap().at(&[0.0, 0.0]);
        let y = [2.0, -1.0];
        let q = p.prox_conjugate(0.7, y);
        assert!(q[0].hypot(q[1]) <= 1.0 + 1e-14);
        // optimality of the prox: y − q ∈ σ ∂f*(q), i.e. q ∈ ∂f((y−q)/σ)
        let xi = [(y[0] - q[0]) / 0.7, (y[1] - q[1]) / 0.7];
        let g = p.grad(xi).unwrap();
        assert!((g[0] - q[0]).abs() < 1e-9 && (g[1] - q[1]).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn radial_prox_matches_bisection(
            w in 0.2f64..3.0, c0 in 0.01f64..2.0, sigma in 1e-3f64..50.0,
            y0 in -20.0f64..20.0, y1 in -20.0f64..20.0,
        ) {
            let p = PointIntegrand { norm: Norm::Euclid { w }, c0, dim: 2 };
            let a = p.prox_conjugate(sigma, [y0, y1]);
            let b = p.prox_conjugate_bisect(sigma, [y0, y1]);
            proptest::prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            proptest::prop_assert!(a[0].hypot(a[1]) <= w);
        }
    }

    #[test]
    fn ext_real_order() {
        assert!(ExtReal::PosInfinity > ExtReal::Finite(1e300));
        assert!(ExtReal::Finite(-1.0) < ExtReal::Finite(0.0));
        assert_eq!(ExtReal::Finite(1.0) + ExtReal::PosInfinity, ExtReal::PosInfinity);
    }
}
