//! Penalized action minimization over grid node values.
//!
//! Each penalty level runs an accelerated gradient method (Nesterov momentum
//! with adaptive restart and backtracking) preconditioned by the action's
//! Hessian at `b = 0`, a tridiagonal matrix per coordinate, plus the
//! diagonal curvature of the penalty at the start of the level.

use rayon::prelude::*;
use serde::Serialize;

use super::event::{EventSpec, Target};
use super::{control_of, OptimizerDiagnostics, PenaltyStep, RateResult};
use crate::error::Result;
use crate::model::{ProblemSpec, SpacePath, TimeGrid};
use crate::pde::ValueSurface;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateOptions {
    pub starts: usize,
    pub initial_weight: f64,
    pub weight_factor: f64,
    pub max_weight: f64,
    /// Constraint-norm tolerance for calling a path feasible.
    pub feasibility_tol: f64,
    /// Iteration budget per penalty level.
    pub max_iter: usize,
    /// Stop a level once `gᵀP⁻¹g` drops below this.
    pub grad_tol: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            initial_weight: 1.0,
            weight_factor: 10.0,
            max_weight: 1e8,
            feasibility_tol: 1e-4,
            max_iter: 4000,
            grad_tol: 1e-20,
        }
    }
}

pub(crate) enum Constraint<'a> {
    Event {
        event: EventSpec,
        reference: Vec<f64>,
        surface: Option<&'a ValueSurface>,
        coordinate: usize,
    },
    Path {
        target: Vec<f64>,
        surface: &'a ValueSurface,
    },
}

pub(crate) struct Objective<'a> {
    spec: &'a ProblemSpec,
    grid: TimeGrid,
    n: usize,
    constraint: Constraint<'a>,
}

/// `u(s, x)` at `x` clamped to the mesh box, with the gradient of that
/// composition (zero along clamped axes).
fn clamped_value(u: &ValueSurface, s: f64, x: &[f64], grad: &mut [f64]) -> f64 {
    let mut p = x.to_vec();
    let mut clamped = [false; 2];
    for (i, a) in u.mesh().axes().iter().enumerate() {
        if p[i] < a.lo() {
            p[i] = a.lo();
            clamped[i] = true;
        } else if p[i] > a.hi() {
            p[i] = a.hi();
            clamped[i] = true;
        }
    }
    let v = u
        .value_and_space_gradient(s, &p, grad)
        .expect("clamped point lies in the mesh");
    for (g, c) in grad.iter_mut().zip(clamped) {
        if c {
            *g = 0.0;
        }
    }
    v
}

/// `G(ψ)` with the path clamped into the mesh box.
pub(crate) fn clamped_g(u: &ValueSurface, psi: &SpacePath) -> Result<Vec<f64>> {
    let mut g = vec![0.0; psi.dim()];
    Ok((0..psi.grid().len())
        .map(|k| clamped_value(u, psi.grid().node(k), psi.point(k), &mut g))
        .collect())
}

struct Precond {
    /// Per coordinate: diagonal over nodes `1..=N`.
    diag: Vec<Vec<f64>>,
    off: f64,
}

impl Precond {
    fn solve(&self, g: &[f64], n: usize, out: &mut [f64]) {
        out[..n].fill(0.0);
        let steps = self.diag[0].len();
        let mut c = vec![0.0; steps];
        let mut d = vec![0.0; steps];
        for i in 0..n {
            let a = &self.diag[i];
            // Thomas algorithm on tridiag(off, a, off)
            c[0] = self.off / a[0];
            d[0] = g[n + i] / a[0];
            for k in 1..steps {
                let m = a[k] - self.off * c[k - 1];
                c[k] = self.off / m;
                d[k] = (g[(k + 1) * n + i] - self.off * d[k - 1]) / m;
            }
            out[steps * n + i] = d[steps - 1];
            for k in (0..steps - 1).rev() {
                let next = out[(k + 2) * n + i];
                out[(k + 1) * n + i] = d[k] - c[k] * next;
            }
        }
    }
}

struct Outcome {
    values: Vec<f64>,
    action: f64,
    residual: f64,
    trail: Vec<PenaltyStep>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(spec: &'a ProblemSpec, grid: TimeGrid, constraint: Constraint<'a>) -> Self {
        Self {
            spec,
            grid,
            n: spec.dim(),
            constraint,
        }
    }

    pub(crate) fn action_of(spec: &ProblemSpec, grid: &TimeGrid, xi: &[f64]) -> f64 {
        let n = spec.dim();
        let dt = grid.step();
        let mut b = vec![0.0; n];
        let mut total = 0.0;
        for k in 0..grid.steps() {
            let x = &xi[k * n..(k + 1) * n];
            spec.drift(grid.node(k), x, &mut b);
            for i in 0..n {
                let v = (xi[(k + 1) * n + i] - x[i]) / dt - b[i];
                total += v * v;
            }
        }
        0.5 * total * dt
    }

    /// Action and its gradient (written into `grad`, start node zeroed).
    fn action_grad(&self, xi: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n;
        let dt = self.grid.step();
        grad.fill(0.0);
        let mut b = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        let mut v = vec![0.0; n];
        let mut total = 0.0;
        for k in 0..self.grid.steps() {
            let s = self.grid.node(k);
            let x = &xi[k * n..(k + 1) * n];
            self.spec.drift(s, x, &mut b);
            for i in 0..n {
                v[i] = (xi[(k + 1) * n + i] - x[i]) / dt - b[i];
                total += v[i] * v[i];
                grad[(k + 1) * n + i] += v[i];
                grad[k * n + i] -= v[i];
            }
            self.spec.drift_jacobian(s, x, &mut jac);
            // −Δ Jᵀv from the b(s_k, ξ_k) term
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += jac[i * n + j] * v[i];
                }
                grad[k * n + j] -= dt * acc;
            }
        }
        grad[..n].fill(0.0);
        0.5 * total * dt
    }

    /// Scalar process on the path and its per-node gradient in `ξ_k`.
    fn process(&self, xi: &[f64], surface: Option<&ValueSurface>, coordinate: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let len = self.grid.len();
        let mut p = vec![0.0; len];
        let mut dp = vec![0.0; len * n];
        for k in 0..len {
            let x = &xi[k * n..(k + 1) * n];
            match surface {
                None => {
                    p[k] = x[coordinate];
                    dp[k * n + coordinate] = 1.0;
                }
                Some(u) => p[k] = clamped_value(u, self.grid.node(k), x, &mut dp[k * n..(k + 1) * n]),
            }
        }
        (p, dp)
    }

    /// Squared constraint distance; adds `weight·∇(d²)` into `grad` when
    /// given, and fills `curv` with the per-node diagonal curvature
    /// `2·weight·(∂p)²` when given.
    fn penalty(&self, xi: &[f64], weight: f64, grad: Option<&mut [f64]>, curv: Option<&mut [f64]>) -> f64 {
        let n = self.n;
        match &self.constraint {
            Constraint::Event {
                event,
                reference,
                surface,
                coordinate,
            } => {
                let (p, dp) = self.process(xi, *surface, *coordinate);
                let v = event.violation(&p, reference);
                let k = v.node;
                if let Some(g) = grad {
                    if v.distance > 0.0 {
                        for i in 0..n {
                            g[k * n + i] += weight * 2.0 * v.distance * v.sign * dp[k * n + i];
                        }
                    }
                }
                if let Some(c) = curv {
                    for i in 0..n {
                        c[k * n + i] += 2.0 * weight * dp[k * n + i].powi(2);
                    }
                }
                v.distance * v.distance
            }
            Constraint::Path { target, surface } => {
                let (p, dp) = self.process(xi, Some(surface), 0);
                let mut total = 0.0;
                let mut g = grad;
                let mut c = curv;
                for k in 0..p.len() {
                    let r = p[k] - target[k];
                    total += r * r;
                    if k == 0 {
                        continue;
                    }
                    for i in 0..n {
                        if let Some(g) = g.as_deref_mut() {
                            g[k * n + i] += weight * 2.0 * r * dp[k * n + i];
                        }
                        if let Some(c) = c.as_deref_mut() {
                            c[k * n + i] += 2.0 * weight * dp[k * n + i].powi(2);
                        }
                    }
                }
                total
            }
        }
    }

    fn residual(&self, xi: &[f64]) -> f64 {
        self.penalty(xi, 0.0, None, None).sqrt()
    }

    fn value(&self, xi: &[f64], weight: f64) -> f64 {
        Self::action_of(self.spec, &self.grid, xi) + weight * self.penalty(xi, 0.0, None, None)
    }

    fn value_grad(&self, xi: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let a = self.action_grad(xi, grad);
        let d2 = self.penalty(xi, weight, Some(grad), None);
        grad[..self.n].fill(0.0);
        a + weight * d2
    }

    fn precond(&self, xi: &[f64], weight: f64) -> Precond {
        let n = self.n;
        let steps = self.grid.steps();
        let dt = self.grid.step();
        let mut curv = vec![0.0; xi.len()];
        self.penalty(xi, weight, None, Some(&mut curv));
        let diag = (0..n)
            .map(|i| {
                (1..=steps)
                    .map(|k| {
                        let base = if k == steps { 1.0 / dt } else { 2.0 / dt };
                        base + curv[k * n + i]
                    })
                    .collect()
            })
            .collect();
        Precond { diag, off: -1.0 / dt }
    }

    /// One penalty level from `x0`: returns the path, iterations, final
    /// `√(gᵀP⁻¹g)` and whether the level terminated on a stationarity test.
    fn level(&self, x0: Vec<f64>, weight: f64, opts: &RateOptions) -> (Vec<f64>, usize, f64, bool) {
        let pre = self.precond(&x0, weight);
        let len = x0.len();
        let mut x = x0;
        let mut x_prev = x.clone();
        let mut g = vec![0.0; len];
        let mut p = vec![0.0; len];
        let mut y = vec![0.0; len];
        let mut trial = vec![0.0; len];
        let mut f_x = self.value(&x, weight);
        let mut t = 1.0f64;
        let mut alpha = 1.0f64;
        let mut gnorm = f64::INFINITY;
        for it in 0..opts.max_iter {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for j in 0..len {
                y[j] = x[j] + beta * (x[j] - x_prev[j]);
            }
            let f_y = self.value_grad(&y, weight, &mut g);
            pre.solve(&g, self.n, &mut p);
            let gp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
            gnorm = gp.max(0.0).sqrt();
            if gp <= opts.grad_tol * (1.0 + f_y.abs()) {
                if beta == 0.0 {
                    return (x, it, gnorm, true);
                }
                x_prev.copy_from_slice(&x);
                t = 1.0;
                continue;
            }
            alpha = (alpha * 2.0).min(4.0);
            let mut f_new;
            loop {
                for j in 0..len {
                    trial[j] = y[j] - alpha * p[j];
                }
                f_new = self.value(&trial, weight);
                if f_new <= f_y - 0.5 * alpha * gp || alpha < 1e-14 {
                    break;
                }
                alpha *= 0.5;
            }
            if !(f_new < f_x) {
                if beta == 0.0 {
                    // no descent even without momentum: numerically stationary
                    return (x, it, gnorm, true);
                }
                x_prev.copy_from_slice(&x);
                t = 1.0;
                continue;
            }
            std::mem::swap(&mut x_prev, &mut x);
            x.copy_from_slice(&trial);
            f_x = f_new;
            t = t_next;
        }
        (x, opts.max_iter, gnorm, false)
    }

    fn solve_from(&self, start: Vec<f64>, opts: &RateOptions) -> Outcome {
        let mut x = start;
        let mut weight = opts.initial_weight;
        let mut trail: Vec<PenaltyStep> = Vec::new();
        let mut iterations = 0;
        let (mut gnorm, mut stationary);
        loop {
            let (nx, it, gn, ok) = self.level(x, weight, opts);
            x = nx;
            iterations += it;
            gnorm = gn;
            stationary = ok;
            let action = Self::action_of(self.spec, &self.grid, &x);
            let residual = self.residual(&x);
            let settled = trail
                .last()
                .is_some_and(|prev| (prev.action - action).abs() <= 1e-9 * action.max(1.0));
            trail.push(PenaltyStep {
                weight,
                action,
                residual,
                iterations: it,
            });
            if (residual <= opts.feasibility_tol && settled) || weight >= opts.max_weight {
                break;
            }
            weight *= opts.weight_factor;
        }
        let last = *trail.last().expect("at least one level");
        Outcome {
            values: x,
            action: last.action,
            residual: last.residual,
            trail,
            iterations,
            grad_norm: gnorm,
            converged: stationary && last.residual <= opts.feasibility_tol,
        }
    }

    pub(crate) fn run(&self, starts: Vec<SpacePath>, opts: &RateOptions) -> Result<RateResult> {
        let count = starts.len();
        let outcomes: Vec<Outcome> = starts
            .into_par_iter()
            .map(|s| self.solve_from(s.into_values(), opts))
            .collect();
        let value = |o: &Outcome| {
            if o.residual <= opts.feasibility_tol {
                o.action
            } else {
                f64::INFINITY
            }
        };
        let best = (0..count)
            .min_by(|&a, &b| {
                value(&outcomes[a])
                    .total_cmp(&value(&outcomes[b]))
                    .then(a.cmp(&b))
            })
            .expect("at least one start");
        let o = &outcomes[best];
        let minimizer = SpacePath::new(self.grid, self.n, o.values.clone())?;
        let control = control_of(self.spec, &minimizer);
        Ok(RateResult {
            value: value(o),
            feasibility_residual: o.residual,
            diagnostics: OptimizerDiagnostics {
                iterations: o.iterations,
                final_gradient_norm: o.grad_norm,
                penalty_trail: o.trail.clone(),
                starts: count,
                best_start: best,
                converged: o.converged,
            },
            minimizer,
            control,
        })
    }

    fn tau(&self, k: usize) -> f64 {
        (self.grid.node(k) - self.grid.t0()) / self.grid.span()
    }
}

/// Shapes for bridge perturbations, all zero at the start.
fn shape(j: usize, tau: f64) -> f64 {
    use std::f64::consts::PI;
    let scale = 1.0 + 0.25 * (j / 7) as f64;
    let base = match j % 7 {
        0 => tau,
        1 => (0.5 * PI * tau).sin(),
        2 => (2.0 * tau).min(1.0),
        3 => (4.0 * tau).min(1.0),
        4 => 1.5 * tau,
        5 => tau * tau,
        _ => (PI * tau).sin(),
    };
    scale * base
}

fn shifted(obj: &Objective<'_>, base: &SpacePath, sigma: &[f64], j: usize) -> SpacePath {
    let mut p = base.clone();
    for k in 1..obj.grid.len() {
        let w = shape(j, obj.tau(k));
        for (x, s) in p.point_mut(k).iter_mut().zip(sigma) {
            *x += s * w;
        }
    }
    p
}

/// Displacement of the end point that would roughly meet the event.
fn event_shift(obj: &Objective<'_>, zero: &SpacePath) -> Vec<f64> {
    use super::event::Functional;
    let n = obj.n;
    let Constraint::Event {
        event,
        reference,
        surface,
        coordinate,
    } = &obj.constraint
    else {
        unreachable!("event starts for an event constraint")
    };
    let (p, _) = obj.process(zero.values(), *surface, *coordinate);
    let last = p[p.len() - 1];
    let mut gap = match event.functional {
        Functional::TerminalAtLeast { level } => level - last,
        Functional::TerminalInInterval { lo, hi } => 0.5 * (lo + hi) - last,
        Functional::SupDeviationAtLeast { delta } => delta - (last - reference[reference.len() - 1]),
    };
    if gap.abs() < 1e-3 {
        gap = 0.1;
    }
    let mut sigma = vec![0.0; n];
    match (event.target, surface) {
        (Target::X { .. }, _) | (_, None) => sigma[*coordinate] = gap,
        (Target::Y, Some(u)) => {
            let nk = obj.grid.steps();
            let mut g = vec![0.0; n];
            clamped_value(u, obj.grid.node(nk), zero.point(nk), &mut g);
            let g2: f64 = g.iter().map(|v| v * v).sum();
            let width: Vec<f64> = u.mesh().axes().iter().map(|a| a.hi() - a.lo()).collect();
            if g2 > 1e-16 {
                for i in 0..n {
                    sigma[i] = (gap * g[i] / g2).clamp(-width[i], width[i]);
                }
            } else {
                sigma[0] = 0.25 * width[0] * gap.signum();
            }
        }
    }
    sigma
}

pub(crate) fn event_starts(obj: &Objective<'_>, zero: &SpacePath, count: usize) -> Vec<SpacePath> {
    let sigma = event_shift(obj, zero);
    let mut out = vec![zero.clone()];
    for j in 0..count.saturating_sub(1) {
        out.push(shifted(obj, zero, &sigma, j));
    }
    out
}

/// Flow start, the nodewise inverse of `u` through the target, and
/// perturbations of that inverse.
pub(crate) fn path_starts(obj: &Objective<'_>, zero: &SpacePath, count: usize) -> Vec<SpacePath> {
    let Constraint::Path { target, surface } = &obj.constraint else {
        unreachable!("path starts for a path constraint")
    };
    let n = obj.n;
    let mut inv = zero.clone();
    let mut g = vec![0.0; n];
    for k in 1..obj.grid.len() {
        let s = obj.grid.node(k);
        for _ in 0..50 {
            let x = inv.point(k).to_vec();
            let r = clamped_value(surface, s, &x, &mut g) - target[k];
            let g2: f64 = g.iter().map(|v| v * v).sum();
            if r.abs() < 1e-13 || g2 < 1e-16 {
                break;
            }
            for (xi, gi) in inv.point_mut(k).iter_mut().zip(&g) {
                *xi -= r * gi / g2;
            }
        }
    }
    let width = surface.mesh().axes()[0].hi() - surface.mesh().axes()[0].lo();
    let mut out = vec![zero.clone(), inv.clone()];
    let mut j = 0;
    while out.len() < count {
        let mut sigma = vec![0.0; n];
        sigma[j % n] = 0.02 * width * if j % 2 == 0 { 1.0 } else { -1.0 };
        out.push(shifted(obj, &inv, &sigma, 6 + 7 * (j / 2)));
        j += 1;
    }
    out.truncate(count.max(1));
    out
}
