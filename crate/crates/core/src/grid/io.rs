//! Binary field files and CSV export.
//!
//! Layout (little-endian): magic `LGF1`, dim `u32`, cells per axis `u64`×dim,
//! h `f64`, origin `f64`×dim, then the cell values as `f64` in row-major
//! order. Dual fields use magic `LGD1`, the same header and the quadrant
//! vectors in [`DualField`] order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DualField, GridSpec, Gridded, ScalarField};
use crate::error::{Error, Result};

const FIELD_MAGIC: &[u8; 4] = b"LGF1";
const DUAL_MAGIC: &[u8; 4] = b"LGD1";

fn header(magic: &[u8; 4], g: &GridSpec) -> Vec<u8> {
    let mut b = Vec::with_capacity(64);
    b.extend_from_slice(magic);
    b.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    for a in 0..g.dim() {
        b.extend_from_slice(&(g.cells()[a] as u64).to_le_bytes());
    }
    b.extend_from_slice(&g.h().to_le_bytes());
    for a in 0..g.dim() {
        b.extend_from_slice(&g.origin()[a].to_le_bytes());
    }
    b
}

fn encode(magic: &[u8; 4], g: &GridSpec, values: &[f64]) -> Vec<u8> {
    let mut b = header(magic, g);
    b.reserve(values.len() * 8);
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(magic: &[u8; 4], buf: &[u8]) -> Result<(GridSpec, Vec<f64>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let dim = r.u32()? as usize;
    if dim != 1 && dim != 2 {
        return Err(Error::Format(format!("unsupported dim {dim}")));
    }
    let mut cells = Vec::with_capacity(dim);
    for _ in 0..dim {
        cells.push(r.u64()? as usize);
    }
    let h = r.f64()?;
    let mut origin = Vec::with_capacity(dim);
    for _ in 0..dim {
        origin.push(r.f64()?);
    }
    let g = GridSpec::new(dim, &cells, h, &origin)?;
    let rest = buf.len() - r.pos;
    if rest % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64".into()));
    }
    let mut values = Vec::with_capacity(rest / 8);
    while r.pos < buf.len() {
        values.push(r.f64()?);
    }
    Ok((g, values))
}

pub fn write_field(path: &Path, u: &ScalarField) -> Result<()> {
    fs::write(path, encode(FIELD_MAGIC, u.grid(), u.values()))?;
    Ok(())
}

/// Reads a field onto its (unmasked) box grid.
pub fn read_field(path: &Path) -> Result<ScalarField> {
    let (g, v) = decode(FIELD_MAGIC, &fs::read(path)?)?;
    if v.len() != g.n_cells() {
        return Err(Error::Format(format!("expected {} values, found {}", g.n_cells(), v.len())));
    }
    ScalarField::new(g, v)
}

pub fn write_dual(path: &Path, z: &DualField) -> Result<()> {
    fs::write(path, encode(DUAL_MAGIC, z.grid(), z.values()))?;
    Ok(())
}

pub fn read_dual(path: &Path) -> Result<DualField> {
    let (g, v) = decode(DUAL_MAGIC, &fs::read(path)?)?;
    DualField::new(g, v)
}

/// CSV with columns `x[,y],value`, active cells only.
pub fn write_field_csv<W: Write>(mut w: W, u: &ScalarField) -> Result<()> {
    let g = u.grid();
    if g.dim() == 1 {
        writeln!(w, "x,value")?;
    } else {
        writeln!(w, "x,y,value")?;
    }
    for c in g.active_cells() {
        let x = g.cell_center(c);
        if g.dim() == 1 {
            writeln!(w, "{},{}", x[0], u.values()[c])?;
        } else {
            writeln!(w, "{},{},{}", x[0], x[1], u.values()[c])?;
        }
    }
    Ok(())
}
