//! The perturbed forward SDE `dX = b(s, X) ds + √ε dW` and its deterministic
//! flow.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{euclid_dist, make_noise, NoiseStream, ProblemSpec, SpacePath, TimeGrid};
use crate::stats::{mean_and_se, ordered_sum};

/// Euler–Maruyama: `X_{k+1} = X_k + b(s_k, X_k)Δ + √ε ΔW_k`, `X_0 = x`.
pub fn simulate_forward(spec: &ProblemSpec, eps: f64, grid: &TimeGrid, noise: &NoiseStream) -> Result<SpacePath> {
    spec.check_grid(grid)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("noise level must be nonnegative, got {eps}")));
    }
    let n = spec.dim();
    if noise.steps() != grid.steps() || noise.dim() != n {
        return Err(Error::invalid(format!(
            "noise is {}×{}, grid needs {}×{}",
            noise.steps(),
            noise.dim(),
            grid.steps(),
            n
        )));
    }
    let dt = grid.step();
    let sq = eps.sqrt();
    let mut values = Vec::with_capacity(grid.len() * n);
    values.extend_from_slice(spec.x0());
    let mut b = vec![0.0; n];
    for k in 0..grid.steps() {
        let x = &values[k * n..(k + 1) * n];
        spec.drift(grid.node(k), x, &mut b);
        let dw = noise.increment(k);
        for i in 0..n {
            let next = values[k * n + i] + b[i] * dt + sq * dw[i];
            if !next.is_finite() {
                return Err(Error::NonfiniteState { node: k + 1 });
            }
            values.push(next);
        }
    }
    SpacePath::new(*grid, n, values)
}

/// Classical fourth-order Runge–Kutta for `χ' = b(s, χ)`, `χ(t) = x`.
pub fn solve_flow(spec: &ProblemSpec, grid: &TimeGrid) -> Result<SpacePath> {
    spec.check_grid(grid)?;
    let n = spec.dim();
    let dt = grid.step();
    let mut values = Vec::with_capacity(grid.len() * n);
    values.extend_from_slice(spec.x0());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for k in 0..grid.steps() {
        let s = grid.node(k);
        let x: Vec<f64> = values[k * n..(k + 1) * n].to_vec();
        spec.drift(s, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        spec.drift(s + 0.5 * dt, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        spec.drift(s + 0.5 * dt, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        spec.drift(s + dt, &tmp, &mut k4);
        for i in 0..n {
            let next = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !next.is_finite() {
                return Err(Error::NonfiniteState { node: k + 1 });
            }
            values.push(next);
        }
    }
    SpacePath::new(*grid, n, values)
}

/// Moments of `sup_s |X^ε(s) − χ(s)|` over grid nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardRunStats {
    pub eps: f64,
    pub paths: usize,
    pub steps: usize,
    /// Estimate of `E[sup |X^ε − χ|²]`.
    pub sup_dev_l2: f64,
    pub se_l2: f64,
    /// Estimate of `E[sup |X^ε − χ|]`.
    pub sup_dev_l1: f64,
    pub se_l1: f64,
}

impl ForwardRunStats {
    pub const CSV_HEADER: &'static str = "eps,sup_dev_L2,se_L2,sup_dev_L1,se_L1,M,N";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.eps, self.sup_dev_l2, self.se_l2, self.sup_dev_l1, self.se_l1, self.paths, self.steps
        )
    }
}

/// Runs `paths` trajectories (stream `i` for trajectory `i`) against the flow
/// on the same grid.
pub fn deviation_stats(
    spec: &ProblemSpec,
    eps: f64,
    grid: &TimeGrid,
    paths: usize,
    master_seed: u64,
) -> Result<ForwardRunStats> {
    if paths < 2 {
        return Err(Error::invalid("deviation statistics need at least 2 paths"));
    }
    let flow = solve_flow(spec, grid)?;
    let sups: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let noise = make_noise(master_seed, i as u64, grid, spec.dim());
            let x = simulate_forward(spec, eps, grid, &noise)?;
            Ok((0..grid.len())
                .map(|k| euclid_dist(x.point(k), flow.point(k)))
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let squares: Vec<f64> = sups.iter().map(|s| s * s).collect();
    let (l2, se2) = mean_and_se(&squares);
    let (l1, se1) = mean_and_se(&sups);
    debug_assert!(ordered_sum(&squares) >= 0.0);
    Ok(ForwardRunStats {
        eps,
        paths,
        steps: grid.steps(),
        sup_dev_l2: l2,
        se_l2: se2,
        sup_dev_l1: l1,
        se_l1: se1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficient, Role};

    fn decay_spec() -> ProblemSpec {
        ProblemSpec::builder(1)
            .start(vec![1.0])
            .drift(Coefficient::scalar_linear(Role::Drift, 1, -1.0, 0.0))
            .build()
            .unwrap()
    }

    #[test]
    fn zero_drift_zero_noise_is_constant() {
        let spec = ProblemSpec::builder(1).start(vec![1.0]).build().unwrap();
        let g = spec.grid(20).unwrap();
        let x = simulate_forward(&spec, 0.0, &g, &make_noise(1, 0, &g, 1)).unwrap();
        assert!(x.values().iter().all(|v| *v == 1.0));
        let chi = solve_flow(&spec, &g).unwrap();
        assert!(chi.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn euler_polygon_converges_first_order() {
        let spec = decay_spec();
        let mut errs = Vec::new();
        for steps in [100, 200, 400] {
            let g = spec.grid(steps).unwrap();
            let x = simulate_forward(&spec, 0.0, &g, &make_noise(0, 0, &g, 1)).unwrap();
            let err = g
                .nodes()
                .enumerate()
                .map(|(k, s)| (x.point(k)[0] - (-s).exp()).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1.0 / steps as f64);
            errs.push(err);
        }
        // halving Δ halves the error
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn rk4_flow_matches_exponential() {
        let spec = decay_spec();
        let g = spec.grid(100).unwrap();
        let chi = solve_flow(&spec, &g).unwrap();
        for (k, s) in g.nodes().enumerate() {
            assert!((chi.point(k)[0] - (-s).exp()).abs() <= 1e-6);
        }
    }

    #[test]
    fn rk4_flow_state_independent_drift() {
        let spec = ProblemSpec::builder(1)
            .start(vec![0.3])
            .drift(Coefficient::sinusoidal(Role::Drift, 1, 1.0, 1.0, 0.0))
            .build()
            .unwrap();
        let g = spec.grid(100).unwrap();
        let chi = solve_flow(&spec, &g).unwrap();
        for (k, s) in g.nodes().enumerate() {
            let exact = 0.3 + 1.0 - s.cos();
            assert!((chi.point(k)[0] - exact).abs() <= 1e-6);
        }
    }

    #[test]
    fn brownian_terminal_moments() {
        // X(T) ~ N(0, εT) exactly when b = 0
        let spec = ProblemSpec::builder(1).build().unwrap();
        let g = spec.grid(10).unwrap();
        let m = 10_000;
        let xt: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let noise = make_noise(99, i as u64, &g, 1);
                simulate_forward(&spec, 0.04, &g, &noise).unwrap().point(10)[0]
            })
            .collect();
        let mean = xt.iter().sum::<f64>() / m as f64;
        let var = xt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        assert!(mean.abs() <= 4.0 * 0.2 / (m as f64).sqrt(), "mean {mean}");
        assert!((var - 0.04).abs() <= 0.05 * 0.04, "var {var}");
    }

    #[test]
    fn antithetic_noise_negates_deviation() {
        let spec = ProblemSpec::builder(2).start(vec![0.5, -1.0]).build().unwrap();
        let g = spec.grid(30).unwrap();
        let noise = make_noise(5, 2, &g, 2);
        let a = simulate_forward(&spec, 0.3, &g, &noise).unwrap();
        let b = simulate_forward(&spec, 0.3, &g, &noise.negated()).unwrap();
        for k in 0..g.len() {
            for i in 0..2 {
                let x0 = spec.x0()[i];
                assert!(((a.point(k)[i] - x0) + (b.point(k)[i] - x0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = ProblemSpec::builder(1)
            .start(vec![1.0])
            .drift(Coefficient::scalar_linear(Role::Drift, 1, 1e200, 0.0))
            .build()
            .unwrap();
        let g = spec.grid(10).unwrap();
        let err = simulate_forward(&spec, 0.0, &g, &make_noise(0, 0, &g, 1)).unwrap_err();
        assert!(matches!(err, Error::NonfiniteState { .. }));
        assert!(matches!(solve_flow(&spec, &g), Err(Error::NonfiniteState { .. })));
    }

    #[test]
    fn deviation_zero_without_noise_or_drift() {
        let spec = ProblemSpec::builder(1).build().unwrap();
        let g = spec.grid(50).unwrap();
        let st = deviation_stats(&spec, 0.0, &g, 16, 3).unwrap();
        assert_eq!(st.sup_dev_l2, 0.0);
        assert_eq!(st.sup_dev_l1, 0.0);
    }

    #[test]
    fn deviation_scales_with_eps_for_brownian() {
        // sup|X − x|² = ε sup|W|² pathwise under common streams
        let spec = ProblemSpec::builder(1).build().unwrap();
        let g = spec.grid(100).unwrap();
        let a = deviation_stats(&spec, 0.1, &g, 2000, 17).unwrap();
        let b = deviation_stats(&spec, 0.01, &g, 2000, 17).unwrap();
        let ratio = (a.sup_dev_l2 / 0.1) / (b.sup_dev_l2 / 0.01);
        assert!((ratio - 1.0).abs() < 0.2, "ratio {ratio}");
        // Cauchy–Schwarz at statistical tolerance
        assert!(a.sup_dev_l1.powi(2) <= a.sup_dev_l2 + 3.0 * (a.se_l2 + 2.0 * a.sup_dev_l1 * a.se_l1));
    }

    #[test]
    fn deviation_depends_only_on_inputs() {
        let spec = decay_spec();
        let g = spec.grid(40).unwrap();
        let a = deviation_stats(&spec, 0.05, &g, 300, 8).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| deviation_stats(&spec, 0.05, &g, 300, 8).unwrap());
        assert_eq!(a, b);
    }
}
