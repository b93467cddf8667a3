//! Cross-sectional least squares on polynomial features of `X_k`, optionally
//! augmented with the obstacle `h(t_k, X_k)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ordered_sum;

/// Rows per block in the Gram accumulation. Fixed so that the reduction
/// order, and hence every bit of the result, does not depend on threads.
const BLOCK: usize = 2048;

/// Standardized monomials of total degree `≤ degree`, plus `h` if asked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    pub include_obstacle: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 4,
            include_obstacle: true,
        }
    }
}

impl RegressionBasis {
    /// Number of columns for an `n`-dimensional state, before dropping
    /// constant columns.
    pub fn size(&self, n: usize) -> usize {
        exponents(n, self.degree).len() + usize::from(self.include_obstacle)
    }
}

/// Every exponent tuple in `n` variables with total degree `≤ degree`,
/// constant first, graded order.
pub(crate) fn exponents(n: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(n, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, degree, &mut Vec::with_capacity(n), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<usize>(), std::cmp::Reverse(e.clone())));
    out
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = ordered_sum(xs) / m;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (ordered_sum(&dev) / m).sqrt())
}

fn is_flat(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * (1.0 + mean.abs())
}

/// Outcome of one node's fit.
#[derive(Debug)]
pub(crate) struct Fit {
    /// Fitted values per right-hand side, each of length `M`.
    pub fitted: Vec<Vec<f64>>,
    #[allow(dead_code)]
    pub columns: usize,
    pub obstacle_dropped: bool,
}

/// Fits every right-hand side on the features of `states` (row-major
/// `M × n`) and `obstacle` (length `M`).
pub(crate) fn regress(
    node: usize,
    basis: &RegressionBasis,
    states: &[f64],
    n: usize,
    obstacle: &[f64],
    rhs: &[Vec<f64>],
) -> Result<Fit> {
    let m = obstacle.len();
    let coords: Vec<(usize, f64, f64)> = (0..n)
        .filter_map(|j| {
            let c: Vec<f64> = (0..m).map(|i| states[i * n + j]).collect();
            let (mu, sd) = mean_sd(&c);
            (!is_flat(mu, sd)).then_some((j, mu, sd))
        })
        .collect();
    let exps = exponents(coords.len(), basis.degree);
    let (h_mu, h_sd) = mean_sd(obstacle);
    let with_h = basis.include_obstacle && !is_flat(h_mu, h_sd);
    match solve(node, &coords, &exps, with_h.then_some((h_mu, h_sd)), states, n, obstacle, rhs) {
        Ok(fit) => Ok(fit),
        Err(Error::SingularRegression { .. }) if with_h => {
            // h is an exact combination of the monomials (affine obstacle)
            let mut fit = solve(node, &coords, &exps, None, states, n, obstacle, rhs)?;
            fit.obstacle_dropped = true;
            Ok(fit)
        }
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn solve(
    node: usize,
    coords: &[(usize, f64, f64)],
    exps: &[Vec<usize>],
    h_scale: Option<(f64, f64)>,
    states: &[f64],
    n: usize,
    obstacle: &[f64],
    rhs: &[Vec<f64>],
) -> Result<Fit> {
    let m = obstacle.len();
    let p = exps.len() + usize::from(h_scale.is_some());
    let r = rhs.len();
    let feature_row = |i: usize, out: &mut [f64]| {
        let z: Vec<f64> = coords.iter().map(|&(j, mu, sd)| (states[i * n + j] - mu) / sd).collect();
        for (c, e) in exps.iter().enumerate() {
            out[c] = e.iter().zip(&z).map(|(&k, v)| v.powi(k as i32)).product();
        }
        if let Some((mu, sd)) = h_scale {
            out[p - 1] = (obstacle[i] - mu) / sd;
        }
    };
    let mut phi = vec![0.0; m * p];
    phi.par_chunks_mut(p).enumerate().for_each(|(i, row)| feature_row(i, row));

    let blocks: Vec<(Vec<f64>, Vec<f64>)> = phi
        .par_chunks(BLOCK * p)
        .enumerate()
        .map(|(b, rows)| {
            let mut gram = vec![0.0; p * p];
            let mut rhs_acc = vec![0.0; p * r];
            for (li, row) in rows.chunks(p).enumerate() {
                let i = b * BLOCK + li;
                for a in 0..p {
                    for c in a..p {
                        gram[a * p + c] += row[a] * row[c];
                    }
                    for (q, y) in rhs.iter().enumerate() {
                        rhs_acc[q * p + a] += row[a] * y[i];
                    }
                }
            }
            (gram, rhs_acc)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut bvec = vec![DVector::<f64>::zeros(p); r];
    for (g, acc) in &blocks {
        for a in 0..p {
            for c in a..p {
                gram[(a, c)] += g[a * p + c];
            }
            for (q, b) in bvec.iter_mut().enumerate() {
                b[a] += acc[q * p + a];
            }
        }
    }
    for a in 0..p {
        for c in 0..a {
            gram[(a, c)] = gram[(c, a)];
        }
    }
    let scale = (0..p).map(|a| gram[(a, a)]).fold(0.0, f64::max);
    let chol = gram.cholesky().ok_or(Error::SingularRegression { node, columns: p })?;
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-11 * scale) {
        return Err(Error::SingularRegression { node, columns: p });
    }
    let coefs: Vec<DVector<f64>> = bvec.iter().map(|b| chol.solve(b)).collect();
    let fitted = coefs
        .iter()
        .map(|beta| {
            phi.par_chunks(p)
                .map(|row| row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Fit {
        fitted,
        columns: p,
        obstacle_dropped: false,
    })
}
