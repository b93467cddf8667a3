//! Parabolic obstacle problem
//! `min(u − h, −∂ₜu − (ε/2)Δu − b·∇u − f(t, x, u, √ε∇u)) = 0`, `u(T) = g`,
//! solved by an explicit projected upwind scheme on one- or two-dimensional
//! tensor meshes.

mod io;
mod mesh;

pub use io::{read_surface_binary, read_surface_csv, write_surface_binary, write_surface_csv};
pub use mesh::{Axis, Mesh};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, ScalarPath, SpacePath};

/// Space nodes per level above which a level is updated in parallel.
const PARALLEL_THRESHOLD: usize = 4096;

/// How many explicit substeps to take between stored time levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Substeps {
    /// Smallest count that keeps the CFL number at or below `target`.
    Auto { target: f64 },
    /// Exactly this many; `CFL_VIOLATION` if that is unstable.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PdeOptions {
    pub substeps: Substeps,
    /// Check that the box holds the flow plus the noise margin.
    pub check_box: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            substeps: Substeps::Auto { target: 0.9 },
            check_box: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SchemeDiagnostics {
    pub substeps_per_level: usize,
    pub total_steps: usize,
    /// CFL number of the substep actually used.
    pub cfl: f64,
    /// Largest `|min(u − h, −D_t u − L_h u − f)|` over interior updates.
    pub max_residual: f64,
    /// Number of node updates where the projection was active.
    pub projected_updates: usize,
    pub boundary: String,
}

/// `u^ε` on every node of a mesh.
#[derive(Clone, Debug)]
pub struct ValueSurface {
    mesh: Mesh,
    eps: f64,
    u: Vec<f64>,
    diagnostics: SchemeDiagnostics,
}

impl ValueSurface {
    /// Wraps raw node values (time-major, then space in axis-0-major order).
    pub fn from_values(mesh: Mesh, eps: f64, u: Vec<f64>) -> Result<Self> {
        if u.len() != mesh.node_count() {
            return Err(Error::invalid(format!(
                "surface needs {} values, got {}",
                mesh.node_count(),
                u.len()
            )));
        }
        Ok(Self {
            mesh,
            eps,
            u,
            diagnostics: SchemeDiagnostics::default(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn diagnostics(&self) -> &SchemeDiagnostics {
        &self.diagnostics
    }

    /// Space row of time level `k`.
    pub fn level(&self, k: usize) -> &[f64] {
        let s = self.mesh.space_len();
        &self.u[k * s..(k + 1) * s]
    }

    pub fn node_value(&self, k: usize, space: usize) -> f64 {
        self.u[k * self.mesh.space_len() + space]
    }

    fn out_of_span(&self, s: f64, x: &[f64]) -> Error {
        let (lo, hi) = match self.mesh.axes().iter().zip(x).find(|(a, v)| a.locate(**v).is_none()) {
            Some((a, _)) => (a.lo(), a.hi()),
            None => (self.mesh.time().t0(), self.mesh.time().t1()),
        };
        Error::OutOfSpan {
            what: format!("(s={s}, x={x:?})"),
            lo,
            hi,
        }
    }

    /// Trilinear (or bilinear) weights: time cell, space cells.
    fn stencil(&self, s: f64, x: &[f64]) -> Result<(usize, f64, Vec<(usize, f64)>)> {
        if x.len() != self.mesh.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, surface has {}",
                x.len(),
                self.mesh.dim()
            )));
        }
        let (k, wt) = self.mesh.time().locate(s).map_err(|_| self.out_of_span(s, x))?;
        let mut cells = Vec::with_capacity(x.len());
        for (a, v) in self.mesh.axes().iter().zip(x) {
            cells.push(a.locate(*v).ok_or_else(|| self.out_of_span(s, x))?);
        }
        Ok((k, wt, cells))
    }

    fn space_interp(&self, k: usize, cells: &[(usize, f64)]) -> f64 {
        let row = self.level(k);
        match cells {
            [(i, w)] => {
                if *w == 0.0 {
                    row[*i]
                } else {
                    (1.0 - w) * row[*i] + w * row[i + 1]
                }
            }
            [(i, wi), (j, wj)] => {
                let n1 = self.mesh.axes()[1].len();
                let at = |a: usize, b: usize| row[a * n1 + b];
                let lo = (1.0 - wj) * at(*i, *j) + wj * at(*i, (j + 1).min(n1 - 1));
                if *wi == 0.0 {
                    return lo;
                }
                let hi = (1.0 - wj) * at(i + 1, *j) + wj * at(i + 1, (j + 1).min(n1 - 1));
                (1.0 - wi) * lo + wi * hi
            }
            _ => unreachable!("mesh dimension is 1 or 2"),
        }
    }

    /// Interpolated `u^ε(s, x)`.
    pub fn eval_value(&self, s: f64, x: &[f64]) -> Result<f64> {
        let (k, wt, cells) = self.stencil(s, x)?;
        let a = self.space_interp(k, &cells);
        if wt == 0.0 {
            return Ok(a);
        }
        Ok((1.0 - wt) * a + wt * self.space_interp(k + 1, &cells))
    }

    /// Centred difference of the interpolant with one space step per axis.
    pub fn gradient(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        let mut p = x.to_vec();
        for (i, a) in self.mesh.axes().iter().enumerate() {
            let h = a.step();
            p[i] = x[i] + h;
            let up = self.eval_value(s, &p);
            p[i] = x[i] - h;
            let dn = self.eval_value(s, &p);
            p[i] = x[i];
            match (up, dn) {
                (Ok(u), Ok(d)) => out.push((u - d) / (2.0 * h)),
                _ => {
                    return Err(Error::OutOfSpan {
                        what: format!("gradient stencil at (s={s}, x={x:?})"),
                        lo: a.lo() + h,
                        hi: a.hi() - h,
                    })
                }
            }
        }
        Ok(out)
    }

    /// Value and exact gradient of the interpolant in `x`. At a space node
    /// the derivative is the average of the two adjacent cells.
    pub(crate) fn value_and_space_gradient(&self, s: f64, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let v = self.eval_value(s, x)?;
        let mut p = x.to_vec();
        for (i, a) in self.mesh.axes().iter().enumerate() {
            let (c, w) = a.locate(x[i]).expect("checked by eval_value");
            let h = a.step();
            if w == 0.0 && c > 0 {
                p[i] = a.node(c + 1);
                let up = self.eval_value(s, &p)?;
                p[i] = a.node(c - 1);
                let dn = self.eval_value(s, &p)?;
                grad[i] = (up - dn) / (2.0 * h);
            } else {
                p[i] = a.node(c);
                let lo = self.eval_value(s, &p)?;
                p[i] = a.node(c + 1);
                let hi = self.eval_value(s, &p)?;
                grad[i] = (hi - lo) / h;
            }
            p[i] = x[i];
        }
        Ok(v)
    }

    /// `G^ε(ψ) = [s ↦ u^ε(s, ψ(s))]` on the grid of `ψ`.
    pub fn apply_g(&self, psi: &SpacePath) -> Result<ScalarPath> {
        let grid = *psi.grid();
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let x = psi.point(k);
            let v = self.eval_value(grid.node(k), x).map_err(|e| match e {
                Error::OutOfSpan { lo, hi, .. } => Error::OutOfSpan {
                    what: format!("path node {k} at {x:?}"),
                    lo,
                    hi,
                },
                other => other,
            })?;
            values.push(v);
        }
        ScalarPath::new(grid, values)
    }
}

/// Free-function spelling of [`ValueSurface::eval_value`].
pub fn eval_value(surface: &ValueSurface, s: f64, x: &[f64]) -> Result<f64> {
    surface.eval_value(s, x)
}

/// Free-function spelling of [`ValueSurface::gradient`].
pub fn gradient(surface: &ValueSurface, s: f64, x: &[f64]) -> Result<Vec<f64>> {
    surface.gradient(s, x)
}

/// Free-function spelling of [`ValueSurface::apply_g`].
pub fn apply_g(surface: &ValueSurface, psi: &SpacePath) -> Result<ScalarPath> {
    surface.apply_g(psi)
}

/// `max |a − b|` over all nodes of two surfaces on the same mesh.
pub fn sup_node_difference(a: &ValueSurface, b: &ValueSurface) -> Result<f64> {
    if !a.mesh.same_as(&b.mesh) {
        return Err(Error::IncompatibleGrid("surfaces live on different meshes".into()));
    }
    Ok(a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Backward projected upwind sweep with default options.
pub fn solve_obstacle_pde(spec: &ProblemSpec, eps: f64, mesh: &Mesh) -> Result<ValueSurface> {
    solve_obstacle_pde_with(spec, eps, mesh, &PdeOptions::default())
}

pub fn solve_obstacle_pde_with(spec: &ProblemSpec, eps: f64, mesh: &Mesh, opts: &PdeOptions) -> Result<ValueSurface> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("noise level must be nonnegative, got {eps}")));
    }
    if mesh.dim() != spec.dim() {
        return Err(Error::invalid(format!(
            "mesh dimension {} does not match problem dimension {}",
            mesh.dim(),
            spec.dim()
        )));
    }
    spec.check_grid(mesh.time())?;
    if opts.check_box {
        mesh.check_box(spec, eps)?;
    }
    Sweep::new(spec, eps, mesh).run(opts)
}

struct Sweep<'a> {
    spec: &'a ProblemSpec,
    eps: f64,
    mesh: &'a Mesh,
    /// Node coordinates, `space_len × dim`.
    coords: Vec<f64>,
    /// `(stride, step, len)` per axis.
    axes: Vec<(usize, f64, usize)>,
    with_driver: bool,
}

impl<'a> Sweep<'a> {
    fn new(spec: &'a ProblemSpec, eps: f64, mesh: &'a Mesh) -> Self {
        let n = mesh.dim();
        let s = mesh.space_len();
        let mut coords = vec![0.0; s * n];
        for (idx, c) in coords.chunks_mut(n).enumerate() {
            mesh.space_point(idx, c);
        }
        let a = mesh.axes();
        let axes = match a {
            [x] => vec![(1, x.step(), x.len())],
            [x, y] => vec![(y.len(), x.step(), x.len()), (1, y.step(), y.len())],
            _ => unreachable!("mesh dimension is 1 or 2"),
        };
        Self {
            spec,
            eps,
            mesh,
            coords,
            axes,
            with_driver: !spec.driver_is_zero(),
        }
    }

    fn point(&self, idx: usize) -> &[f64] {
        let n = self.mesh.dim();
        &self.coords[idx * n..(idx + 1) * n]
    }

    /// Per-axis position of a flat index.
    fn position(&self, idx: usize, axis: usize) -> usize {
        let (stride, _, len) = self.axes[axis];
        (idx / stride) % len
    }

    fn is_interior(&self, idx: usize) -> bool {
        (0..self.axes.len()).all(|a| {
            let p = self.position(idx, a);
            p > 0 && p + 1 < self.axes[a].2
        })
    }

    /// `max Σᵢ (ε/dxᵢ² + |bᵢ|/dxᵢ)` over nodes and stored levels.
    fn rate_bound(&self) -> f64 {
        let n = self.mesh.dim();
        let time = self.mesh.time();
        let per_level = |k: usize| {
            let mut b = vec![0.0; n];
            let t = time.node(k);
            let mut worst: f64 = 0.0;
            for idx in 0..self.mesh.space_len() {
                self.spec.drift(t, self.point(idx), &mut b);
                let r: f64 = self
                    .axes
                    .iter()
                    .zip(&b)
                    .map(|((_, dx, _), bi)| self.eps / (dx * dx) + bi.abs() / dx)
                    .sum();
                worst = worst.max(r);
            }
            worst
        };
        (0..time.len()).into_par_iter().map(per_level).reduce(|| 0.0f64, f64::max)
    }

    fn run(self, opts: &PdeOptions) -> Result<ValueSurface> {
        let time = *self.mesh.time();
        let dt_level = time.step();
        let rate = self.rate_bound();
        let m = match opts.substeps {
            Substeps::Fixed(m) => {
                let m = m.max(1);
                let cfl = rate * dt_level / m as f64;
                if cfl > 1.0 + 1e-12 {
                    return Err(Error::CflViolation { cfl });
                }
                m
            }
            Substeps::Auto { target } => {
                let target = target.clamp(1e-3, 1.0);
                ((rate * dt_level / target).ceil() as usize).max(1)
            }
        };
        let dt = dt_level / m as f64;
        let s = self.mesh.space_len();
        let mut u = vec![0.0; time.len() * s];
        let mut cur: Vec<f64> = (0..s).map(|i| self.spec.terminal(self.point(i))).collect();
        if let Some(i) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonfiniteState { node: i });
        }
        u[(time.len() - 1) * s..].copy_from_slice(&cur);
        let mut next = vec![0.0; s];
        let mut tilde = vec![0.0; s];
        let mut diag = SchemeDiagnostics {
            substeps_per_level: m,
            total_steps: m * time.steps(),
            cfl: rate * dt,
            boundary: "linear extrapolation, then projection onto the obstacle".into(),
            ..Default::default()
        };
        for k in (0..time.steps()).rev() {
            let t_hi = time.node(k + 1);
            for sub in 0..m {
                let t_known = t_hi - sub as f64 * dt;
                let t_new = if sub + 1 == m { time.node(k) } else { t_hi - (sub + 1) as f64 * dt };
                self.step(&cur, &mut tilde, t_known, dt);
                for idx in 0..s {
                    let h = self.spec.obstacle(t_new, self.point(idx));
                    if self.is_interior(idx) {
                        let v = tilde[idx].max(h);
                        if v > tilde[idx] {
                            diag.projected_updates += 1;
                        }
                        let r = (v - h).min((v - tilde[idx]) / dt).abs();
                        diag.max_residual = diag.max_residual.max(r);
                        next[idx] = v;
                    }
                }
                self.fill_boundary(&mut next, t_new, &mut diag);
                if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonfiniteState { node: k * s + i });
                }
                std::mem::swap(&mut cur, &mut next);
            }
            u[k * s..(k + 1) * s].copy_from_slice(&cur);
        }
        Ok(ValueSurface {
            mesh: self.mesh.clone(),
            eps: self.eps,
            u,
            diagnostics: diag,
        })
    }

    /// Unprojected explicit update at interior nodes, reading only `cur`.
    fn step(&self, cur: &[f64], out: &mut [f64], t: f64, dt: f64) {
        let update = |(idx, o): (usize, &mut f64)| {
            if !self.is_interior(idx) {
                return;
            }
            let x = self.point(idx);
            let mut b = [0.0; 2];
            let n = self.mesh.dim();
            self.spec.drift(t, x, &mut b[..n]);
            let c = cur[idx];
            let mut lu = 0.0;
            let mut z = [0.0; 2];
            for (a, &(stride, dx, _)) in self.axes.iter().enumerate() {
                let up = cur[idx + stride];
                let dn = cur[idx - stride];
                lu += 0.5 * self.eps * (up - 2.0 * c + dn) / (dx * dx);
                lu += if b[a] > 0.0 { b[a] * (up - c) / dx } else { b[a] * (c - dn) / dx };
                z[a] = self.eps.sqrt() * (up - dn) / (2.0 * dx);
            }
            let f = if self.with_driver { self.spec.driver(t, x, c, &z[..n]) } else { 0.0 };
            *o = c + dt * (lu + f);
        };
        if cur.len() >= PARALLEL_THRESHOLD {
            out.par_iter_mut().enumerate().for_each(update);
        } else {
            out.iter_mut().enumerate().for_each(update);
        }
    }

    /// One-sided linear extrapolation along each axis, then the obstacle.
    fn fill_boundary(&self, v: &mut [f64], t: f64, diag: &mut SchemeDiagnostics) {
        match self.axes.as_slice() {
            [(_, _, len)] => {
                let n = *len;
                v[0] = 2.0 * v[1] - v[2];
                v[n - 1] = 2.0 * v[n - 2] - v[n - 3];
            }
            [(s0, _, n0), (_, _, n1)] => {
                let (s0, n0, n1) = (*s0, *n0, *n1);
                for j in 1..n1 - 1 {
                    v[j] = 2.0 * v[s0 + j] - v[2 * s0 + j];
                    v[(n0 - 1) * s0 + j] = 2.0 * v[(n0 - 2) * s0 + j] - v[(n0 - 3) * s0 + j];
                }
                for i in 0..n0 {
                    let r = i * s0;
                    v[r] = 2.0 * v[r + 1] - v[r + 2];
                    v[r + n1 - 1] = 2.0 * v[r + n1 - 2] - v[r + n1 - 3];
                }
            }
            _ => unreachable!("mesh dimension is 1 or 2"),
        }
        for idx in (0..v.len()).filter(|i| !self.is_interior(*i)) {
            let h = self.spec.obstacle(t, self.point(idx));
            if h > v[idx] {
                v[idx] = h;
                diag.projected_updates += 1;
            }
        }
    }
}
