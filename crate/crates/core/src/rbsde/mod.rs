//! Reflected BSDE
//! `Y(s) = g(X(T)) + ∫ f dr + K(T) − K(s) − ∫ Z dW`, `Y ≥ h(s, X)`,
//! `∫ (Y − h) dK = 0`, by discretely reflected regression Monte Carlo, and
//! its deterministic limit along the flow.

mod regression;

pub use regression::RegressionBasis;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{simulate_forward, solve_flow};
use crate::model::{make_noise, ProblemSpec, ScalarPath, SpacePath, TimeGrid};
use crate::stats::{mean_and_se, ordered_sum};

/// Reflected system along `χ`: `Y`, `K` and the flow they were built on.
#[derive(Clone, Debug)]
pub struct DeterministicLimit {
    pub y: ScalarPath,
    pub k: ScalarPath,
    pub flow: SpacePath,
}

/// Backward Euler with projection along the flow,
/// `Y_k = max(Y_{k+1} + f(s_k, χ_k, Y_{k+1}, 0)Δ, h(s_k, χ_k))`.
pub fn solve_deterministic_limit(spec: &ProblemSpec, grid: &TimeGrid) -> Result<DeterministicLimit> {
    let flow = solve_flow(spec, grid)?;
    let n = grid.steps();
    let dt = grid.step();
    let zero = vec![0.0; spec.dim()];
    let mut y = vec![0.0; n + 1];
    let mut dk = vec![0.0; n + 1];
    y[n] = spec.terminal(flow.point(n));
    for k in (0..n).rev() {
        let s = grid.node(k);
        let x = flow.point(k);
        let tilde = y[k + 1] + spec.driver(s, x, y[k + 1], &zero) * dt;
        y[k] = tilde.max(spec.obstacle(s, x));
        dk[k] = y[k] - tilde;
        if !y[k].is_finite() {
            return Err(Error::NonfiniteState { node: k });
        }
    }
    let k = accumulate(&dk);
    Ok(DeterministicLimit {
        y: ScalarPath::new(*grid, y)?,
        k: ScalarPath::new(*grid, k)?,
        flow,
    })
}

/// `K_0 = 0`, `K_{k+1} = K_k + ΔK_k`.
fn accumulate(dk: &[f64]) -> Vec<f64> {
    let mut k = Vec::with_capacity(dk.len());
    let mut acc = 0.0;
    k.push(0.0);
    for d in &dk[..dk.len() - 1] {
        acc += d;
        k.push(acc);
    }
    k
}

/// Obstacle, monotonicity and Skorohod diagnostics of a reflected solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkorohodReport {
    /// `min (Y_k − h_k)`; nonnegative when the obstacle holds.
    pub min_obstacle_gap: f64,
    /// `min (K_{k+1} − K_k)`.
    pub min_increment: f64,
    pub k_start: f64,
    /// `Σ |(Y_k − h_k)·ΔK_k|`, summed over trajectories.
    pub skorohod_sum: f64,
}

impl SkorohodReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_obstacle_gap >= -tol && self.min_increment >= 0.0 && self.k_start == 0.0 && self.skorohod_sum <= tol
    }

    fn of_path(y: &[f64], h: &[f64], k: &[f64]) -> Self {
        let mut r = Self {
            min_obstacle_gap: f64::INFINITY,
            min_increment: f64::INFINITY,
            k_start: k[0],
            skorohod_sum: 0.0,
        };
        for i in 0..y.len() {
            r.min_obstacle_gap = r.min_obstacle_gap.min(y[i] - h[i]);
            if i + 1 < y.len() {
                let d = k[i + 1] - k[i];
                r.min_increment = r.min_increment.min(d);
                r.skorohod_sum += ((y[i] - h[i]) * d).abs();
            }
        }
        r
    }

    fn merge(self, o: Self) -> Self {
        Self {
            min_obstacle_gap: self.min_obstacle_gap.min(o.min_obstacle_gap),
            min_increment: self.min_increment.min(o.min_increment),
            k_start: if self.k_start.abs() >= o.k_start.abs() { self.k_start } else { o.k_start },
            skorohod_sum: self.skorohod_sum + o.skorohod_sum,
        }
    }
}

impl DeterministicLimit {
    pub fn skorohod(&self, spec: &ProblemSpec) -> SkorohodReport {
        let g = self.y.grid();
        let h: Vec<f64> = (0..g.len()).map(|k| spec.obstacle(g.node(k), self.flow.point(k))).collect();
        SkorohodReport::of_path(self.y.values(), &h, self.k.values())
    }
}

/// One row of the per-node summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeSummary {
    pub time: f64,
    pub y_mean: f64,
    pub y_se: f64,
    pub mean_dk: f64,
    pub obstacle_at_flow: f64,
}

/// Every trajectory of `(X, Y, Z, K)` from one regression Monte Carlo run.
#[derive(Clone, Debug)]
pub struct RbsdeSolution {
    grid: TimeGrid,
    eps: f64,
    dim: usize,
    paths: usize,
    basis: RegressionBasis,
    master_seed: u64,
    /// `M × (N+1) × n`.
    x: Vec<f64>,
    /// `M × (N+1)`.
    y: Vec<f64>,
    /// `M × N × n`, `Z_k` for `k < N`.
    z: Vec<f64>,
    /// `M × (N+1)`.
    k: Vec<f64>,
    /// `M × (N+1)`.
    h: Vec<f64>,
    start_value: f64,
    start_se: f64,
    nodes: Vec<NodeSummary>,
    obstacle_dropped_nodes: usize,
}

impl RbsdeSolution {
    pub const NODE_CSV_HEADER: &'static str = "time,Y,SE,mean_dK,obstacle_at_flow";

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn basis(&self) -> RegressionBasis {
        self.basis
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// `Y` at the start node: the regression value at `x`, a deterministic
    /// number for a fixed seed.
    pub fn start_value(&self) -> f64 {
        self.start_value
    }

    pub fn start_se(&self) -> f64 {
        self.start_se
    }

    pub fn nodes(&self) -> &[NodeSummary] {
        &self.nodes
    }

    /// Nodes where the obstacle column duplicated the monomials and was left
    /// out of the fit.
    pub fn obstacle_dropped_nodes(&self) -> usize {
        self.obstacle_dropped_nodes
    }

    fn stride(&self) -> usize {
        self.grid.len()
    }

    pub fn x_path(&self, i: usize) -> SpacePath {
        let w = self.stride() * self.dim;
        SpacePath::new(self.grid, self.dim, self.x[i * w..(i + 1) * w].to_vec()).expect("stored shape")
    }

    pub fn y_path(&self, i: usize) -> ScalarPath {
        let w = self.stride();
        ScalarPath::new(self.grid, self.y[i * w..(i + 1) * w].to_vec()).expect("stored shape")
    }

    pub fn k_path(&self, i: usize) -> ScalarPath {
        let w = self.stride();
        ScalarPath::new(self.grid, self.k[i * w..(i + 1) * w].to_vec()).expect("stored shape")
    }

    /// `Z_k` of trajectory `i`, one entry per noise coordinate.
    pub fn z_at(&self, i: usize, k: usize) -> &[f64] {
        let n = self.dim;
        let base = (i * self.grid.steps() + k) * n;
        &self.z[base..base + n]
    }

    pub fn obstacle_at(&self, i: usize, k: usize) -> f64 {
        self.h[i * self.stride() + k]
    }

    pub fn skorohod(&self) -> SkorohodReport {
        let w = self.stride();
        (0..self.paths)
            .into_par_iter()
            .map(|i| {
                let r = i * w..(i + 1) * w;
                SkorohodReport::of_path(&self.y[r.clone()], &self.h[r.clone()], &self.k[r])
            })
            .collect::<Vec<_>>()
            .into_iter()
            .reduce(SkorohodReport::merge)
            .expect("at least one path")
    }

    pub fn node_csv(&self) -> String {
        let mut s = String::from(Self::NODE_CSV_HEADER);
        s.push('\n');
        for r in &self.nodes {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.time, r.y_mean, r.y_se, r.mean_dk, r.obstacle_at_flow
            ));
        }
        s
    }

    /// One line per (trajectory, node) for the first `count` trajectories:
    /// `path,time,X_1..X_n,Y,K`.
    pub fn trajectory_csv(&self, count: usize) -> String {
        let mut s = String::from("path,time");
        for j in 0..self.dim {
            s.push_str(&format!(",X{}", j + 1));
        }
        s.push_str(",Y,K\n");
        let w = self.stride();
        for i in 0..self.paths.min(count) {
            for k in 0..w {
                s.push_str(&format!("{i},{}", self.grid.node(k)));
                for j in 0..self.dim {
                    s.push_str(&format!(",{}", self.x[(i * w + k) * self.dim + j]));
                }
                s.push_str(&format!(",{},{}\n", self.y[i * w + k], self.k[i * w + k]));
            }
        }
        s
    }
}

/// Tsitsiklis–Van Roy style discretely reflected scheme:
/// `Z_k = Regress(Y_{k+1}ΔW_k | X_k)/Δ`,
/// `Ỹ_k = Regress(Y_{k+1} | X_k) + f(s_k, X_k, ·, Z_k)Δ` with one
/// predictor–corrector pass for the `y` argument, `Y_k = max(Ỹ_k, h)`.
pub fn solve_rbsde_mc(
    spec: &ProblemSpec,
    eps: f64,
    grid: &TimeGrid,
    paths: usize,
    basis: RegressionBasis,
    master_seed: u64,
) -> Result<RbsdeSolution> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("regression Monte Carlo needs ε > 0, got {eps}")));
    }
    let n = spec.dim();
    let need = 10 * basis.size(n);
    if paths < need {
        return Err(Error::invalid(format!(
            "{paths} paths is fewer than 10 × basis size ({need})"
        )));
    }
    spec.check_grid(grid)?;
    let steps = grid.steps();
    let w = grid.len();
    let dt = grid.step();

    let sims: Vec<(Vec<f64>, Vec<f64>)> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let noise = make_noise(master_seed, i as u64, grid, n);
            let x = simulate_forward(spec, eps, grid, &noise)?;
            Ok((x.into_values(), noise.increments().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut x = Vec::with_capacity(paths * w * n);
    let mut dw = Vec::with_capacity(paths * steps * n);
    for (xi, wi) in sims {
        x.extend_from_slice(&xi);
        dw.extend_from_slice(&wi);
    }
    let xs = |i: usize, k: usize| &x[(i * w + k) * n..(i * w + k + 1) * n];

    let mut y = vec![0.0; paths * w];
    let mut z = vec![0.0; paths * steps * n];
    let mut dk = vec![0.0; paths * w];
    let mut h = vec![0.0; paths * w];
    for i in 0..paths {
        for k in 0..w {
            h[i * w + k] = spec.obstacle(grid.node(k), xs(i, k));
        }
        y[i * w + steps] = spec.terminal(xs(i, steps));
    }
    let with_driver = !spec.driver_is_zero();
    let mut dropped = 0;
    let mut start_se = 0.0;
    for k in (0..steps).rev() {
        let s = grid.node(k);
        let states: Vec<f64> = (0..paths).flat_map(|i| xs(i, k).to_vec()).collect();
        let hk: Vec<f64> = (0..paths).map(|i| h[i * w + k]).collect();
        let next: Vec<f64> = (0..paths).map(|i| y[i * w + k + 1]).collect();
        let mut rhs = vec![next.clone()];
        for j in 0..n {
            rhs.push((0..paths).map(|i| next[i] * dw[(i * steps + k) * n + j]).collect());
        }
        let fit = regression::regress(k, &basis, &states, n, &hk, &rhs)?;
        if fit.obstacle_dropped {
            dropped += 1;
        }
        if k == 0 {
            // spread of the continuation sample behind the start value
            let cont: Vec<f64> = (0..paths)
                .map(|i| {
                    let zi: Vec<f64> = (0..n).map(|j| fit.fitted[1 + j][i] / dt).collect();
                    let f = if with_driver { spec.driver(s, xs(i, 0), next[i], &zi) } else { 0.0 };
                    next[i] + f * dt
                })
                .collect();
            start_se = mean_and_se(&cont).1;
        }
        for i in 0..paths {
            let zi: Vec<f64> = (0..n).map(|j| fit.fitted[1 + j][i] / dt).collect();
            let cond = fit.fitted[0][i];
            let tilde = if with_driver {
                let xk = xs(i, k);
                let pred = cond + spec.driver(s, xk, cond, &zi) * dt;
                cond + spec.driver(s, xk, pred, &zi) * dt
            } else {
                cond
            };
            let v = tilde.max(h[i * w + k]);
            if !v.is_finite() {
                return Err(Error::NonfiniteState { node: k });
            }
            y[i * w + k] = v;
            dk[i * w + k] = v - tilde;
            z[(i * steps + k) * n..(i * steps + k + 1) * n].copy_from_slice(&zi);
        }
    }
    let mut kk = vec![0.0; paths * w];
    for i in 0..paths {
        let acc = accumulate(&dk[i * w..(i + 1) * w]);
        kk[i * w..(i + 1) * w].copy_from_slice(&acc);
    }
    let flow = solve_flow(spec, grid)?;
    let nodes = (0..w)
        .map(|k| {
            let yk: Vec<f64> = (0..paths).map(|i| y[i * w + k]).collect();
            let dks: Vec<f64> = (0..paths).map(|i| dk[i * w + k]).collect();
            let (mean, se) = mean_and_se(&yk);
            NodeSummary {
                time: grid.node(k),
                y_mean: mean,
                y_se: if k == 0 { start_se } else { se },
                mean_dk: ordered_sum(&dks) / paths as f64,
                obstacle_at_flow: spec.obstacle(grid.node(k), flow.point(k)),
            }
        })
        .collect();
    Ok(RbsdeSolution {
        grid: *grid,
        eps,
        dim: n,
        paths,
        basis,
        master_seed,
        start_value: y[0],
        start_se,
        x,
        y,
        z,
        k: kk,
        h,
        nodes,
        obstacle_dropped_nodes: dropped,
    })
}

/// Both sides of the a priori estimate
/// `E[sup|Y|² + ∫|Z|² + K(T)²] ≤ C·E[g(X_T)² + ∫f(s,X,0,0)² + sup (h⁺)²]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AprioriReport {
    pub eps: f64,
    pub paths: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; NaN when the right side is degenerate.
    pub ratio: f64,
    /// Right side below `1e-12`: the estimate carries no information.
    pub degenerate_rhs: bool,
}

/// The obstacle enters through its positive part, so an inactive obstacle at
/// `−10⁶` contributes nothing.
pub fn apriori_check(solution: &RbsdeSolution, spec: &ProblemSpec) -> Result<AprioriReport> {
    if spec.dim() != solution.dim {
        return Err(Error::invalid("solution and problem dimensions differ"));
    }
    spec.check_grid(&solution.grid)?;
    let g = solution.grid;
    let w = g.len();
    let dt = g.step();
    let n = solution.dim;
    let zero = vec![0.0; n];
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = (0..solution.paths)
        .into_par_iter()
        .map(|i| {
            let ys = &solution.y[i * w..(i + 1) * w];
            let sup_y = ys.iter().map(|v| v * v).fold(0.0, f64::max);
            let zsq: f64 = (0..g.steps())
                .map(|k| solution.z_at(i, k).iter().map(|v| v * v).sum::<f64>() * dt)
                .sum();
            let kt = solution.k[(i + 1) * w - 1];
            let xpath = &solution.x[i * w * n..(i + 1) * w * n];
            let xt = &xpath[(w - 1) * n..];
            let f2: f64 = (0..g.steps())
                .map(|k| spec.driver(g.node(k), &xpath[k * n..(k + 1) * n], 0.0, &zero).powi(2) * dt)
                .sum();
            let sup_h = solution.h[i * w..(i + 1) * w]
                .iter()
                .map(|v| v.max(0.0).powi(2))
                .fold(0.0, f64::max);
            (sup_y + zsq + kt * kt, spec.terminal(xt).powi(2) + f2 + sup_h)
        })
        .unzip();
    let m = solution.paths as f64;
    let lhs = ordered_sum(&lhs) / m;
    let rhs = ordered_sum(&rhs) / m;
    let degenerate_rhs = rhs < 1e-12;
    Ok(AprioriReport {
        eps: solution.eps,
        paths: solution.paths,
        lhs,
        rhs,
        ratio: if degenerate_rhs { f64::NAN } else { lhs / rhs },
        degenerate_rhs,
    })
}

/// Relative spread `(max − min)/min` of the ratios across runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioStability {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub variation: f64,
    pub stable: bool,
}

/// Flags growth of the implied constant across runs (`variation < limit`).
pub fn ratio_stability(reports: &[AprioriReport], limit: f64) -> RatioStability {
    let ratios: Vec<f64> = reports.iter().map(|r| r.ratio).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let variation = (max_ratio - min_ratio) / min_ratio;
    RatioStability {
        min_ratio,
        max_ratio,
        variation,
        stable: variation.is_finite() && variation < limit,
    }
}
