//! Cell-centred fields on uniform 1D/2D grids with a staggered gradient.
//!
//! Cells are indexed row-major (x fastest): `c = j * nx + i`. Face values of
//! a [`VectorField`] are stored axis by axis; the x-face between cells
//! (i, j) and (i+1, j) has index `j * (nx - 1) + i`, the y-face between
//! (i, j) and (i, j+1) has index `offset_y + j * nx + i`.
//!
//! A grid may carry an activity mask. Inactive cells are outside the domain:
//! faces touching them are not interior faces, and the interface becomes a
//! boundary face with an axis-aligned outward normal.
//!
//! Cellwise integrands are evaluated on 2^n "quadrants" per cell. Quadrant
//! `s` of cell `c` takes, along axis `a`, the gradient on the lower face if
//! bit `a` of `s` is 0 and on the upper face otherwise (zero if that face is
//! not interior). Each quadrant carries weight h^n / 2^n.

mod io;
mod ops;

pub use io::{read_dual, read_field, write_dual, write_field, write_field_csv};
pub use ops::*;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CELL_CAP: usize = 64 * 1024 * 1024;
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub axis: usize,
    pub side: Side,
    pub center: [f64; 2],
    pub normal: [f64; 2],
}

#[derive(Debug)]
struct Topology {
    active: Vec<bool>,
    n_active: usize,
    face_offset_y: usize,
    n_faces: usize,
    face_active: Vec<bool>,
    lo_face: [Vec<u32>; 2],
    hi_face: [Vec<u32>; 2],
    bfaces: Vec<BoundaryFace>,
    bface_start: Vec<u32>,
}

#[derive(Debug)]
struct GridInner {
    dim: usize,
    cells: [usize; 2],
    h: f64,
    origin: [f64; 2],
    mask: Option<Vec<bool>>,
    topo: Topology,
}

/// Uniform grid on the box origin + [0, cells·h), optionally masked.
/// Cheap to clone.
#[derive(Clone, Debug)]
pub struct GridSpec(Arc<GridInner>);

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dim == other.0.dim
                && self.0.cells == other.0.cells
                && self.0.h == other.0.h
                && self.0.origin == other.0.origin
                && self.0.mask == other.0.mask)
    }
}

impl GridSpec {
    pub fn new(dim: usize, cells: &[usize], h: f64, origin: &[f64]) -> Result<Self> {
        Self::with_cap(dim, cells, h, origin, DEFAULT_CELL_CAP)
    }

    pub fn with_cap(dim: usize, cells: &[usize], h: f64, origin: &[f64], cap: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if cells.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "need {dim} cell counts and origin coordinates, got {} and {}",
                cells.len(),
                origin.len()
            )));
        }
        if cells.iter().any(|&c| c < 2) {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {cells:?}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        let total = cells.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
        match total {
            Some(t) if t <= cap && t < NONE as usize => {}
            _ => {
                return Err(Error::InvalidGrid(format!(
                    "{cells:?} exceeds the cell cap of {cap}"
                )))
            }
        }
        let cells2 = [cells[0], if dim == 2 { cells[1] } else { 1 }];
        let origin2 = [origin[0], if dim == 2 { origin[1] } else { 0.0 }];
        Ok(Self::build(dim, cells2, h, origin2, None))
    }

    pub fn new_1d(n: usize, h: f64, x0: f64) -> Result<Self> {
        Self::new(1, &[n], h, &[x0])
    }

    pub fn new_2d(nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self> {
        Self::new(2, &[nx, ny], h, &origin)
    }

    /// Unit interval / square with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![n; dim], 1.0 / n as f64, &vec![0.0; dim])
    }

    /// Same box with an activity mask (one flag per cell).
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "mask has {} entries for {} cells",
                mask.len(),
                self.n_cells()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidGrid("mask has no active cells".into()));
        }
        let mask = if mask.iter().all(|&m| m) { None } else { Some(mask) };
        Ok(Self::build(self.0.dim, self.0.cells, self.0.h, self.0.origin, mask))
    }

    /// Mask from a predicate on cell centres.
    pub fn with_mask_fn(&self, f: impl Fn([f64; 2]) -> bool) -> Result<Self> {
        let mask = (0..self.n_cells()).map(|c| f(self.cell_center(c))).collect();
        self.with_mask(mask)
    }

    /// The unmasked box grid.
    pub fn unmasked(&self) -> Self {
        if self.0.mask.is_none() {
            self.clone()
        } else {
            Self::build(self.0.dim, self.0.cells, self.0.h, self.0.origin, None)
        }
    }

    pub fn is_masked(&self) -> bool {
        self.0.mask.is_some()
    }

    /// Equal dims, counts, spacing and origin (masks ignored).
    pub fn same_box(&self, other: &GridSpec) -> bool {
        self.0.dim == other.0.dim
            && self.0.cells == other.0.cells
            && self.0.h == other.0.h
            && self.0.origin == other.0.origin
    }

    fn build(dim: usize, cells: [usize; 2], h: f64, origin: [f64; 2], mask: Option<Vec<bool>>) -> Self {
        let [nx, ny] = cells;
        let n = nx * ny;
        let active: Vec<bool> = match &mask {
            Some(m) => m.clone(),
            None => vec![true; n],
        };
        let n_active = active.iter().filter(|&&a| a).count();
        let nfx = (nx - 1) * ny;
        let nfy = if dim == 2 { nx * (ny - 1) } else { 0 };
        let mut face_active = vec![false; nfx + nfy];
        let mut lo_face = [vec![NONE; n], vec![NONE; n]];
        let mut hi_face = [vec![NONE; n], vec![NONE; n]];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let (a, b) = (j * nx + i, j * nx + i + 1);
                let f = j * (nx - 1) + i;
                if active[a] && active[b] {
                    face_active[f] = true;
                    hi_face[0][a] = f as u32;
                    lo_face[0][b] = f as u32;
                }
            }
        }
        if dim == 2 {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let (a, b) = (j * nx + i, (j + 1) * nx + i);
                    let f = nfx + j * nx + i;
                    if active[a] && active[b] {
                        face_active[f] = true;
                        hi_face[1][a] = f as u32;
                        lo_face[1][b] = f as u32;
                    }
                }
            }
        }
        let mut bfaces = Vec::new();
        let mut bface_start = Vec::with_capacity(n + 1);
        for c in 0..n {
            bface_start.push(bfaces.len() as u32);
            if !active[c] {
                continue;
            }
            let (i, j) = (c % nx, c / nx);
            let ctr = [origin[0] + (i as f64 + 0.5) * h, origin[1] + (j as f64 + 0.5) * h];
            for axis in 0..dim {
                let (idx, len) = if axis == 0 { (i, nx) } else { (j, ny) };
                for side in [Side::Lower, Side::Upper] {
                    let nb = match side {
                        Side::Lower if idx > 0 => Some(if axis == 0 { c - 1 } else { c - nx }),
                        Side::Upper if idx + 1 < len => Some(if axis == 0 { c + 1 } else { c + nx }),
                        _ => None,
                    };
                    let interior = nb.map(|b| active[b]).unwrap_or(false);
                    if interior {
                        continue;
                    }
                    let sgn = if side == Side::Lower { -1.0 } else { 1.0 };
                    let mut center = ctr;
                    center[axis] += sgn * 0.5 * h;
                    let mut normal = [0.0; 2];
                    normal[axis] = sgn;
                    bfaces.push(BoundaryFace { cell: c, axis, side, center, normal });
                }
            }
        }
        bface_start.push(bfaces.len() as u32);
        GridSpec(Arc::new(GridInner {
            dim,
            cells,
            h,
            origin,
            mask,
            topo: Topology {
                active,
                n_active,
                face_offset_y: nfx,
                n_faces: nfx + nfy,
                face_active,
                lo_face,
                hi_face,
                bfaces,
                bface_start,
            },
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// Cell counts per axis (second entry 1 in 1D).
    pub fn cells(&self) -> [usize; 2] {
        self.0.cells
    }

    pub fn h(&self) -> f64 {
        self.0.h
    }

    pub fn origin(&self) -> [f64; 2] {
        self.0.origin
    }

    pub fn n_cells(&self) -> usize {
        self.0.cells[0] * self.0.cells[1]
    }

    pub fn n_active(&self) -> usize {
        self.0.topo.n_active
    }

    /// h^n
    pub fn cell_volume(&self) -> f64 {
        self.0.h.powi(self.0.dim as i32)
    }

    /// h^(n-1)
    pub fn face_area(&self) -> f64 {
        self.0.h.powi(self.0.dim as i32 - 1)
    }

    /// Measure of the (active) domain.
    pub fn domain_measure(&self) -> f64 {
        self.n_active() as f64 * self.cell_volume()
    }

    #[inline]
    pub fn is_active(&self, c: usize) -> bool {
        self.0.topo.active[c]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.0.topo.active
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_cells()).filter(move |&c| self.0.topo.active[c])
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.0.cells[0], c / self.0.cells[0])
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.0.cells[0] + i
    }

    /// Cell centre, padded to two coordinates.
    #[inline]
    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(c);
        let h = self.0.h;
        let y = if self.0.dim == 2 { self.0.origin[1] + (j as f64 + 0.5) * h } else { 0.0 };
        [self.0.origin[0] + (i as f64 + 0.5) * h, y]
    }

    /// Cell containing x (clamped to the box).
    pub fn locate(&self, x: &[f64]) -> usize {
        let h = self.0.h;
        let idx = |a: usize| -> usize {
            let v = ((x.get(a).copied().unwrap_or(0.0) - self.0.origin[a]) / h).floor();
            (v.max(0.0) as usize).min(self.0.cells[a] - 1)
        };
        if self.0.dim == 1 {
            idx(0)
        } else {
            self.cell_index(idx(0), idx(1))
        }
    }

    pub fn n_faces(&self) -> usize {
        self.0.topo.n_faces
    }

    pub fn face_offset(&self, axis: usize) -> usize {
        if axis == 0 {
            0
        } else {
            self.0.topo.face_offset_y
        }
    }

    pub fn face_axis(&self, f: usize) -> usize {
        if f < self.0.topo.face_offset_y {
            0
        } else {
            1
        }
    }

    /// The two cells a face separates, lower first.
    #[inline]
    pub fn face_cells(&self, f: usize) -> (usize, usize) {
        let nx = self.0.cells[0];
        if f < self.0.topo.face_offset_y {
            let (i, j) = (f % (nx - 1), f / (nx - 1));
            let c = j * nx + i;
            (c, c + 1)
        } else {
            let g = f - self.0.topo.face_offset_y;
            (g, g + nx)
        }
    }

    #[inline]
    pub fn face_active(&self, f: usize) -> bool {
        self.0.topo.face_active[f]
    }

    pub fn face_center(&self, f: usize) -> [f64; 2] {
        let (a, _) = self.face_cells(f);
        let mut x = self.cell_center(a);
        x[self.face_axis(f)] += 0.5 * self.0.h;
        x
    }

    /// Interior face below cell `c` along `axis`, if any.
    #[inline]
    pub fn lo_face(&self, axis: usize, c: usize) -> Option<usize> {
        let f = self.0.topo.lo_face[axis][c];
        (f != NONE).then_some(f as usize)
    }

    /// Interior face above cell `c` along `axis`, if any.
    #[inline]
    pub fn hi_face(&self, axis: usize, c: usize) -> Option<usize> {
        let f = self.0.topo.hi_face[axis][c];
        (f != NONE).then_some(f as usize)
    }

    /// Face used by quadrant `s` of cell `c` along `axis`.
    #[inline]
    pub fn quadrant_face(&self, c: usize, s: usize, axis: usize) -> Option<usize> {
        if (s >> axis) & 1 == 0 {
            self.lo_face(axis, c)
        } else {
            self.hi_face(axis, c)
        }
    }

    pub fn n_quadrants(&self) -> usize {
        1 << self.0.dim
    }

    pub fn quadrant_weight(&self) -> f64 {
        self.cell_volume() / self.n_quadrants() as f64
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.0.topo.bfaces
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.0.topo.bfaces.len()
    }

    /// Indices into [`boundary_faces`](Self::boundary_faces) belonging to cell `c`.
    #[inline]
    pub fn cell_boundary_faces(&self, c: usize) -> Range<usize> {
        let s = &self.0.topo.bface_start;
        s[c] as usize..s[c + 1] as usize
    }

    /// Upper bound on the operator norm of the gradient (h-weighted norms).
    pub fn gradient_norm_bound(&self) -> f64 {
        2.0 * (self.0.dim as f64).sqrt() / self.0.h
    }
}

pub trait Gridded {
    fn grid(&self) -> &GridSpec;
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidParam(format!("{what}: non-finite value at index {i}")));
    }
    Ok(())
}

/// One value per cell. Inactive cells hold 0 by convention.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_len("scalar field", values.len(), grid.n_cells())?;
        check_finite("scalar field", &values)?;
        let mut f = ScalarField { grid, values };
        f.zero_inactive();
        Ok(f)
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.n_cells()] }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    /// Sample `f` at active cell centres.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.n_cells())
            .map(|c| if grid.is_active(c) { f(grid.cell_center(c)) } else { 0.0 })
            .collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        ScalarField { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Reinterpret on a grid with the same box (e.g. attach a mask).
    pub fn on_grid(&self, grid: &GridSpec) -> Result<Self> {
        if !self.grid.same_box(grid) {
            return Err(Error::GridMismatch);
        }
        let mut f = ScalarField { grid: grid.clone(), values: self.values.clone() };
        f.zero_inactive();
        Ok(f)
    }

    fn zero_inactive(&mut self) {
        if self.grid.is_masked() {
            for (c, v) in self.values.iter_mut().enumerate() {
                if !self.grid.is_active(c) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn value_at_point(&self, x: &[f64]) -> f64 {
        self.values[self.grid.locate(x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(c, &v)| if self.grid.is_active(c) { f(v) } else { 0.0 })
            .collect();
        ScalarField { grid: self.grid.clone(), values }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = (0..self.values.len())
            .map(|c| if self.grid.is_active(c) { f(self.values[c], other.values[c]) } else { 0.0 })
            .collect();
        Ok(ScalarField { grid: self.grid.clone(), values })
    }

    /// h-weighted inner product over active cells.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.grid.cell_volume() * self.sum_active(|c| self.values[c] * other.values[c]))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.sum_active(|c| self.values[c] * self.values[c])).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume() * self.sum_active(|c| self.values[c].abs())
    }

    /// ∫ u over the domain.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.sum_active(|c| self.values[c])
    }

    pub fn max_active(&self) -> f64 {
        self.grid.active_cells().map(|c| self.values[c]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_active(&self) -> f64 {
        self.grid.active_cells().map(|c| self.values[c]).fold(f64::INFINITY, f64::min)
    }

    fn sum_active(&self, f: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.values.len() {
            if self.grid.is_active(c) {
                s += f(c);
            }
        }
        s
    }
}

impl Gridded for ScalarField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// One value per interior face, staggered layout (see module docs).
/// Faces that touch an inactive cell hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_len("vector field", values.len(), grid.n_faces())?;
        check_finite("vector field", &values)?;
        let mut values = values;
        for (f, v) in values.iter_mut().enumerate() {
            if !grid.face_active(f) {
                *v = 0.0;
            }
        }
        Ok(VectorField { grid, values })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        VectorField { grid: grid.clone(), values: vec![0.0; grid.n_faces()] }
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        VectorField { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Faces of one axis.
    pub fn axis(&self, axis: usize) -> &[f64] {
        let split = self.grid.face_offset(1);
        let (off, end) = if axis == 0 { (0, split) } else { (split, self.values.len()) };
        &self.values[off..end]
    }

    /// h-weighted inner product over interior faces.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let mut s = 0.0;
        for f in 0..self.values.len() {
            s += self.values[f] * other.values[f];
        }
        Ok(self.grid.cell_volume() * s)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).unwrap().sqrt()
    }
}

impl Gridded for VectorField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// One value per boundary face, in [`GridSpec::boundary_faces`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    grid: GridSpec,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_len("boundary trace", values.len(), grid.n_boundary_faces())?;
        check_finite("boundary trace", &values)?;
        Ok(BoundaryTrace { grid, values })
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        BoundaryTrace { grid: grid.clone(), values: vec![c; grid.n_boundary_faces()] }
    }

    /// Sample `f` at boundary face centres.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = grid.boundary_faces().iter().map(|b| f(b.center)).collect();
        BoundaryTrace { grid: grid.clone(), values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn normals(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.grid.boundary_faces().iter().map(|b| b.normal)
    }

    /// Σ h^(n-1) t², square root.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.face_area() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

impl Gridded for BoundaryTrace {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// One n-vector per cell quadrant: the dual variable z and the quadrant
/// gradients ξ share this layout, `values[(c * 2^n + s) * n + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DualField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_len("dual field", values.len(), grid.n_cells() * grid.n_quadrants() * grid.dim())?;
        check_finite("dual field", &values)?;
        Ok(DualField { grid, values })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        DualField {
            grid: grid.clone(),
            values: vec![0.0; grid.n_cells() * grid.n_quadrants() * grid.dim()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Vector of quadrant `s` in cell `c`, padded to two components.
    #[inline]
    pub fn get(&self, c: usize, s: usize) -> [f64; 2] {
        let n = self.grid.dim();
        let k = (c * self.grid.n_quadrants() + s) * n;
        if n == 1 {
            [self.values[k], 0.0]
        } else {
            [self.values[k], self.values[k + 1]]
        }
    }

    #[inline]
    pub fn set(&mut self, c: usize, s: usize, v: [f64; 2]) {
        let n = self.grid.dim();
        let k = (c * self.grid.n_quadrants() + s) * n;
        self.values[k] = v[0];
        if n == 2 {
            self.values[k + 1] = v[1];
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        DualField { grid: self.grid.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Largest Euclidean norm over active quadrants.
    pub fn max_norm(&self) -> f64 {
        let nq = self.grid.n_quadrants();
        let mut m: f64 = 0.0;
        for c in self.grid.active_cells() {
            for s in 0..nq {
                let v = self.get(c, s);
                m = m.max(v[0].hypot(v[1]));
            }
        }
        m
    }
}

impl Gridded for DualField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// Frames at strictly increasing times, all on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<F> {
    times: Vec<f64>,
    frames: Vec<F>,
}

impl<F: Gridded> TimeSeries<F> {
    pub fn new(times: Vec<f64>, frames: Vec<F>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySeries);
        }
        if times.len() != frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} times for {} frames",
                times.len(),
                frames.len()
            )));
        }
        if !(times[0] >= 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParam("times must be finite and start at t >= 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParam("times must be strictly increasing".into()));
        }
        let g = frames[0].grid();
        if frames.iter().any(|f| f.grid() != g) {
            return Err(Error::GridMismatch);
        }
        Ok(TimeSeries { times, frames })
    }

    pub fn grid(&self) -> &GridSpec {
        self.frames[0].grid()
    }
}

impl<F> TimeSeries<F> {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frames(&self) -> &[F] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, k: usize) -> &F {
        &self.frames[k]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<F>) {
        (self.times, self.frames)
    }
}

impl TimeSeries<ScalarField> {
    /// Space-time L² norm, trapezoid in time.
    pub fn l2_space_time(&self) -> f64 {
        let sq: Vec<f64> = self.frames.iter().map(|f| f.l2_norm().powi(2)).collect();
        trapezoid(&self.times, &sq).sqrt()
    }

    /// Space-time L¹ norm, trapezoid in time.
    pub fn l1_space_time(&self) -> f64 {
        let v: Vec<f64> = self.frames.iter().map(|f| f.l1_norm()).collect();
        trapezoid(&self.times, &v)
    }
}

/// ∫ y dt by the trapezoid rule on the given stamps.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 1..t.len() {
        s += 0.5 * (t[k] - t[k - 1]) * (y[k] + y[k - 1]);
    }
    s
}
