//! Flat export of value surfaces.
//!
//! CSV: one descriptor header line, one descriptor value line, then one
//! line per time level (earliest first) holding that level's space nodes in
//! axis-0-major order.
//!
//! Binary (little endian): magic `RBSU`, `u32` version, `u32` dim,
//! `f64 t0`, `f64 t1`, `u64 time_steps`, `f64 eps`, per axis
//! `f64 lo, f64 hi, u64 steps`, then every node value as `f64` in the same
//! order as the CSV rows.

use std::io::{BufRead, BufWriter, Read, Write};

use super::{Axis, Mesh, ValueSurface};
use crate::error::{Error, Result};
use crate::model::TimeGrid;

const MAGIC: &[u8; 4] = b"RBSU";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::invalid(format!("surface i/o: {e}"))
}

pub fn write_surface_csv<W: Write>(surface: &ValueSurface, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mesh = surface.mesh();
    let t = mesh.time();
    let mut head = vec!["dim".to_string(), "t0".into(), "t1".into(), "time_steps".into(), "eps".into()];
    let mut vals = vec![
        mesh.dim().to_string(),
        t.t0().to_string(),
        t.t1().to_string(),
        t.steps().to_string(),
        surface.eps().to_string(),
    ];
    for (i, a) in mesh.axes().iter().enumerate() {
        head.extend([format!("axis{i}_lo"), format!("axis{i}_hi"), format!("axis{i}_steps")]);
        vals.extend([a.lo().to_string(), a.hi().to_string(), a.steps().to_string()]);
    }
    writeln!(w, "{}", head.join(",")).map_err(io_err)?;
    writeln!(w, "{}", vals.join(",")).map_err(io_err)?;
    for k in 0..t.len() {
        let row: Vec<String> = surface.level(k).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad {what} field {s:?} in surface file")))
}

fn build_mesh(dim: usize, t0: f64, t1: f64, steps: usize, axes: &[(f64, f64, usize)]) -> Result<Mesh> {
    if axes.len() != dim {
        return Err(Error::invalid("surface header axis count does not match dim"));
    }
    let time = TimeGrid::new(t0, t1, steps)?;
    let axes = axes.iter().map(|&(lo, hi, n)| Axis::new(lo, hi, n)).collect::<Result<_>>()?;
    Mesh::new(time, axes)
}

pub fn read_surface_csv<R: BufRead>(input: R) -> Result<ValueSurface> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::invalid("surface file truncated"))?
            .map_err(io_err)
    };
    let _header = next()?;
    let desc = next()?;
    let f: Vec<&str> = desc.split(',').collect();
    if f.len() < 8 {
        return Err(Error::invalid("surface descriptor too short"));
    }
    let dim: usize = parse(f[0], "dim")?;
    let (t0, t1): (f64, f64) = (parse(f[1], "t0")?, parse(f[2], "t1")?);
    let steps: usize = parse(f[3], "time_steps")?;
    let eps: f64 = parse(f[4], "eps")?;
    let mut axes = Vec::new();
    for c in f[5..].chunks(3) {
        if c.len() != 3 {
            return Err(Error::invalid("surface axis descriptor incomplete"));
        }
        axes.push((parse(c[0], "axis lo")?, parse(c[1], "axis hi")?, parse(c[2], "axis steps")?));
    }
    let mesh = build_mesh(dim, t0, t1, steps, &axes)?;
    let mut u = Vec::with_capacity(mesh.node_count());
    for _ in 0..mesh.time().len() {
        let line = next()?;
        for v in line.split(',') {
            u.push(parse::<f64>(v, "node value")?);
        }
    }
    ValueSurface::from_values(mesh, eps, u)
}

pub fn write_surface_binary<W: Write>(surface: &ValueSurface, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mesh = surface.mesh();
    let t = mesh.time();
    let mut buf = Vec::with_capacity(64 + 8 * surface.values().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(mesh.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&t.t0().to_le_bytes());
    buf.extend_from_slice(&t.t1().to_le_bytes());
    buf.extend_from_slice(&(t.steps() as u64).to_le_bytes());
    buf.extend_from_slice(&surface.eps().to_le_bytes());
    for a in mesh.axes() {
        buf.extend_from_slice(&a.lo().to_le_bytes());
        buf.extend_from_slice(&a.hi().to_le_bytes());
        buf.extend_from_slice(&(a.steps() as u64).to_le_bytes());
    }
    for v in surface.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_surface_binary<R: Read>(mut input: R) -> Result<ValueSurface> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::invalid("surface file truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::invalid("not a surface file"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported surface version {version}")));
    }
    let dim = u32_at(take(4)?) as usize;
    let t0 = f64_at(take(8)?);
    let t1 = f64_at(take(8)?);
    let steps = u64_at(take(8)?) as usize;
    let eps = f64_at(take(8)?);
    let mut axes = Vec::new();
    for _ in 0..dim.min(2) {
        axes.push((f64_at(take(8)?), f64_at(take(8)?), u64_at(take(8)?) as usize));
    }
    let mesh = build_mesh(dim, t0, t1, steps, &axes)?;
    let mut u = Vec::with_capacity(mesh.node_count());
    for _ in 0..mesh.node_count() {
        u.push(f64_at(take(8)?));
    }
    ValueSurface::from_values(mesh, eps, u)
}
