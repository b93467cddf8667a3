//! ε-sweep experiments: crude Monte Carlo estimates of rare-event
//! probabilities set against the predicted rate, and convergence-rate
//! studies of `X^ε → χ` and `u^ε → u⁰`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{deviation_stats, simulate_forward, solve_flow};
use crate::model::{make_noise, ProblemSpec, SpacePath, TimeGrid};
use crate::pde::{solve_obstacle_pde_with, sup_node_difference, Mesh, PdeOptions, ValueSurface};
use crate::rate::{
    backward_rate_with, clamped_g, minimize_forward_action_with, serialize_rate, BackwardTarget, EventSpec,
    RateOptions, RateResult, Target,
};
use crate::rbsde::{solve_rbsde_mc, RegressionBasis};
use crate::stats::{fit_log_log, wilson_se, LineFit};

/// Rows with fewer hits are flagged and left out of the fit.
pub const MIN_HITS: usize = 20;

/// How `Y` is realized along simulated paths.
#[derive(Clone, Copy, Debug)]
pub enum YRealization<'a> {
    /// `G^ε(X)` using one surface per ε (any order; matched by ε).
    Surfaces(&'a [ValueSurface]),
    /// Per-trajectory values from the regression solver.
    Lsmc(RegressionBasis),
}

#[derive(Clone, Copy, Debug)]
pub struct YSource<'a> {
    pub realization: YRealization<'a>,
    /// Noiseless surface `u⁰`, used for the reference path and the rate.
    pub limit: &'a ValueSurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Grid resolution for the rate optimization.
    pub rate_steps: usize,
    pub rate: RateOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            rate_steps: 200,
            rate: RateOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub p_hat: f64,
    /// Wilson-interval standard error.
    pub se: f64,
    #[serde(serialize_with = "serialize_rate")]
    pub eps_log_p: f64,
    pub paths: usize,
    pub hits: usize,
    pub too_few_hits: bool,
    /// Paths that left the surface box and were evaluated at its edge.
    pub clamped: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub event: EventSpec,
    pub steps: usize,
    pub master_seed: u64,
    /// Sorted by ε, largest first.
    pub rows: Vec<SweepRow>,
    /// Predicted `Ĩ(Γ)` (or `I(Γ)` for forward events).
    pub rate: RateResult,
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "eps,p_hat,se,eps_log_p,M,hits,too_few_hits";

    pub fn csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eps,
                r.p_hat,
                r.se,
                fmt_num(r.eps_log_p),
                r.paths,
                r.hits,
                r.too_few_hits
            ));
        }
        s
    }

    pub fn usable_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| !r.too_few_hits)
    }
}

pub fn estimate_rare_event(
    spec: &ProblemSpec,
    event: &EventSpec,
    eps_list: &[f64],
    paths: usize,
    grid: &TimeGrid,
    master_seed: u64,
    y: Option<&YSource<'_>>,
) -> Result<SweepTable> {
    estimate_rare_event_with(spec, event, eps_list, paths, grid, master_seed, y, &SweepOptions::default())
}

/// Per ε, simulate `paths` trajectories from the same noise streams, realize
/// the event's process and count hits.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rare_event_with(
    spec: &ProblemSpec,
    event: &EventSpec,
    eps_list: &[f64],
    paths: usize,
    grid: &TimeGrid,
    master_seed: u64,
    y: Option<&YSource<'_>>,
    opts: &SweepOptions,
) -> Result<SweepTable> {
    event.check()?;
    spec.check_grid(grid)?;
    if paths < 1000 {
        return Err(Error::invalid(format!("rare-event sweeps need at least 1000 paths, got {paths}")));
    }
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("ε list must be nonempty and positive"));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let n = spec.dim();
    let flow = solve_flow(spec, grid)?;
    let rate_grid = spec.grid(opts.rate_steps)?;

    let (hits, clamped, rate) = match event.target {
        Target::X { coordinate } => {
            if coordinate >= n {
                return Err(Error::invalid(format!("event coordinate {coordinate} out of range")));
            }
            let reference = flow.coordinate(coordinate);
            let counts = count_hits(paths, eps.len(), |i| {
                let noise = make_noise(master_seed, i as u64, grid, n);
                eps.iter()
                    .map(|&e| {
                        let x = simulate_forward(spec, e, grid, &noise)?;
                        Ok((event.holds(&x.coordinate(coordinate), &reference), false))
                    })
                    .collect()
            })?;
            let rate = minimize_forward_action_with(spec, event, &rate_grid, &opts.rate)?;
            (counts.0, counts.1, rate)
        }
        Target::Y => {
            let src = y.ok_or_else(|| Error::invalid("Y events need a surface or the regression solver"))?;
            let reference = clamped_g(src.limit, &flow)?;
            let counts = match src.realization {
                YRealization::Surfaces(all) => {
                    let surfaces = eps
                        .iter()
                        .map(|&e| {
                            all.iter()
                                .find(|s| (s.eps() - e).abs() <= 1e-12 * e.max(1.0))
                                .ok_or_else(|| Error::invalid(format!("no surface supplied for ε = {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    count_hits(paths, eps.len(), |i| {
                        let noise = make_noise(master_seed, i as u64, grid, n);
                        eps.iter()
                            .zip(&surfaces)
                            .map(|(&e, u)| {
                                let x = simulate_forward(spec, e, grid, &noise)?;
                                let outside = (0..grid.len()).any(|k| !u.mesh().contains(x.point(k)));
                                let yp = clamped_g(u, &x)?;
                                Ok((event.holds(&yp, &reference), outside))
                            })
                            .collect()
                    })?
                }
                YRealization::Lsmc(basis) => {
                    let mut per_eps = vec![vec![false; paths]; eps.len()];
                    for (j, &e) in eps.iter().enumerate() {
                        let sol = solve_rbsde_mc(spec, e, grid, paths, basis, master_seed)?;
                        for (i, hit) in per_eps[j].iter_mut().enumerate() {
                            *hit = event.holds(sol.y_path(i).values(), &reference);
                        }
                    }
                    let hits = per_eps.iter().map(|v| v.iter().filter(|h| **h).count()).collect();
                    (hits, vec![0; eps.len()])
                }
            };
            let rate = backward_rate_with(spec, BackwardTarget::Event(*event), src.limit, &rate_grid, &opts.rate)?;
            (counts.0, counts.1, rate)
        }
    };

    let rows = eps
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let p = hits[j] as f64 / paths as f64;
            SweepRow {
                eps: e,
                p_hat: p,
                se: wilson_se(hits[j], paths),
                eps_log_p: e * p.ln(),
                paths,
                hits: hits[j],
                too_few_hits: hits[j] < MIN_HITS,
                clamped: clamped[j],
            }
        })
        .collect();
    Ok(SweepTable {
        event: *event,
        steps: grid.steps(),
        master_seed,
        rows,
        rate,
    })
}

type Counts = (Vec<usize>, Vec<usize>);

/// Integer tallies per ε; the reduction is exact so the order is irrelevant.
fn count_hits<F>(paths: usize, levels: usize, per_path: F) -> Result<Counts>
where
    F: Fn(usize) -> Result<Vec<(bool, bool)>> + Sync,
{
    (0..paths)
        .into_par_iter()
        .map(|i| {
            per_path(i).map(|v| {
                (
                    v.iter().map(|(h, _)| *h as usize).collect::<Vec<_>>(),
                    v.iter().map(|(_, c)| *c as usize).collect::<Vec<_>>(),
                )
            })
        })
        .try_reduce(
            || (vec![0; levels], vec![0; levels]),
            |mut a, b| {
                for j in 0..levels {
                    a.0[j] += b.0[j];
                    a.1[j] += b.1[j];
                }
                Ok(a)
            },
        )
}

/// One surface per ε on a shared mesh, solved in parallel.
pub fn surfaces_for(spec: &ProblemSpec, eps_list: &[f64], mesh: &Mesh, opts: &PdeOptions) -> Result<Vec<ValueSurface>> {
    eps_list
        .par_iter()
        .map(|&e| solve_obstacle_pde_with(spec, e, mesh, opts))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// One side of the large-deviation bounds checked at the fitted limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub holds: bool,
    /// Signed slack; negative when violated by more than the band.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpVerdict {
    /// Extrapolated `lim ε log P̂`.
    pub limit: f64,
    /// `−Ĩ(Γ)`.
    #[serde(serialize_with = "serialize_rate")]
    pub rate_prediction: f64,
    pub band: f64,
    pub verdict: Verdict,
    pub limit_se: f64,
    /// `limsup ε log P ≤ −I`, up to the band.
    pub upper_bound: BoundCheck,
    /// `liminf ε log P ≥ −I`, up to the band.
    pub lower_bound: BoundCheck,
    pub rows_used: usize,
    pub model: &'static str,
}

/// Relative part of the acceptance band.
pub const BAND_RELATIVE: f64 = 0.25;
/// Absolute floor so zero-rate events get a nondegenerate band.
pub const BAND_FLOOR: f64 = 1e-3;

/// Weighted least squares of `ε log P̂` on `{1, ε, ε log ε}`, weights from the
/// delta-method variance `(ε·se/P̂)²`; the intercept is the limit.
pub fn fit_ldp_slope(table: &SweepTable) -> Result<LdpVerdict> {
    let rows: Vec<&SweepRow> = table.usable_rows().collect();
    if rows.len() < 3 {
        return Err(Error::InsufficientRows {
            needed: 3,
            found: rows.len(),
        });
    }
    let mut a = Matrix3::<f64>::zeros();
    let mut r = Vector3::<f64>::zeros();
    for row in &rows {
        let x = Vector3::new(1.0, row.eps, row.eps * row.eps.ln());
        let sd = (row.eps * row.se / row.p_hat).max(1e-12);
        let w = 1.0 / (sd * sd);
        a += w * x * x.transpose();
        r += w * row.eps_log_p * x;
    }
    let inv = a.try_inverse().ok_or(Error::InsufficientRows {
        needed: 3,
        found: rows.len(),
    })?;
    let beta = inv * r;
    let limit = beta[0];
    let limit_se = inv[(0, 0)].max(0.0).sqrt();
    let prediction = -table.rate.value;
    let band = if prediction.is_finite() {
        (BAND_RELATIVE * prediction.abs()).max(2.0 * limit_se).max(BAND_FLOOR)
    } else {
        (2.0 * limit_se).max(BAND_FLOOR)
    };
    let upper = prediction + band - limit;
    let lower = limit - (prediction - band);
    let upper_bound = BoundCheck {
        holds: upper >= 0.0,
        margin: upper,
    };
    let lower_bound = BoundCheck {
        holds: lower >= 0.0,
        margin: lower,
    };
    let verdict = if upper_bound.holds && lower_bound.holds {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(LdpVerdict {
        limit,
        rate_prediction: prediction,
        band,
        verdict,
        limit_se,
        upper_bound,
        lower_bound,
        rows_used: rows.len(),
        model: "1+eps+eps*ln(eps)",
    })
}

/// Two fixed bumps `χ ± 0.25·sin(π(s − t)/(T − t))` in every
/// coordinate, then the flow itself.
pub fn default_probes(spec: &ProblemSpec, grid: &TimeGrid) -> Result<Vec<SpacePath>> {
    let flow = solve_flow(spec, grid)?;
    let bump = |sign: f64| {
        let mut p = flow.clone();
        for k in 0..grid.len() {
            let s = (grid.node(k) - grid.t0()) / grid.span();
            let d = sign * 0.25 * (std::f64::consts::PI * s).sin();
            p.point_mut(k).iter_mut().for_each(|v| *v += d);
        }
        p
    };
    Ok(vec![bump(1.0), bump(-1.0), flow])
}

#[derive(Clone, Debug)]
pub struct ConvergenceSetup<'a> {
    pub eps: &'a [f64],
    /// Forward simulation grid.
    pub grid: TimeGrid,
    pub paths: usize,
    pub master_seed: u64,
    /// Paths `φ` for `sup_s |G^ε(φ) − G(φ)|`.
    pub probes: &'a [SpacePath],
    pub mesh: &'a Mesh,
    /// Also solve on the 2× refined mesh.
    pub refine: bool,
    pub pde: PdeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// `E[sup |X^ε − χ|²]`.
    pub forward_l2: f64,
    pub forward_se: f64,
    /// `max_φ sup_s |u^ε(s, φ(s)) − u⁰(s, φ(s))|`.
    pub backward_sup: f64,
    /// `max |u^ε − u⁰|` over all mesh nodes.
    pub sup_node: f64,
    pub refined_backward_sup: Option<f64>,
    pub refined_sup_node: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub forward_fit: LineFit,
    pub backward_fit: LineFit,
    pub sup_node_fit: LineFit,
    /// Largest relative change of a backward entry under refinement.
    pub max_refinement_change: Option<f64>,
}

impl ConvergenceTable {
    pub const CSV_HEADER: &'static str =
        "eps,forward_L2,forward_se,backward_sup,sup_node,refined_backward_sup,refined_sup_node";

    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eps,
                r.forward_l2,
                r.forward_se,
                r.backward_sup,
                r.sup_node,
                opt(r.refined_backward_sup),
                opt(r.refined_sup_node)
            ));
        }
        s
    }
}

fn backward_entries(spec: &ProblemSpec, eps: &[f64], mesh: &Mesh, probes: &[SpacePath], opts: &PdeOptions) -> Result<Vec<(f64, f64)>> {
    let u0 = solve_obstacle_pde_with(spec, 0.0, mesh, opts)?;
    let g0 = probes.iter().map(|p| u0.apply_g(p)).collect::<Result<Vec<_>>>()?;
    eps.par_iter()
        .map(|&e| {
            let ue = solve_obstacle_pde_with(spec, e, mesh, opts)?;
            let mut sup = 0.0f64;
            for (p, base) in probes.iter().zip(&g0) {
                sup = sup.max(ue.apply_g(p)?.sup_distance(base)?);
            }
            Ok((sup, sup_node_difference(&ue, &u0)?))
        })
        .collect()
}

pub fn convergence_experiment(spec: &ProblemSpec, setup: &ConvergenceSetup<'_>) -> Result<ConvergenceTable> {
    let eps = {
        let mut e = setup.eps.to_vec();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    };
    if eps.len() < 4 || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("convergence sweeps need at least 4 positive ε values"));
    }
    if eps[0] < 8.0 * eps[eps.len() - 1] * (1.0 - 1e-12) {
        return Err(Error::invalid("ε values must span at least a factor 8"));
    }
    if setup.probes.is_empty() {
        return Err(Error::invalid("at least one probe path is needed"));
    }
    let forward = eps
        .iter()
        .map(|&e| deviation_stats(spec, e, &setup.grid, setup.paths, setup.master_seed))
        .collect::<Result<Vec<_>>>()?;
    let coarse = backward_entries(spec, &eps, setup.mesh, setup.probes, &setup.pde)?;
    let fine = if setup.refine {
        Some(backward_entries(spec, &eps, &setup.mesh.refined(2), setup.probes, &setup.pde)?)
    } else {
        None
    };
    let rows: Vec<ConvergenceRow> = eps
        .iter()
        .enumerate()
        .map(|(j, &e)| ConvergenceRow {
            eps: e,
            forward_l2: forward[j].sup_dev_l2,
            forward_se: forward[j].se_l2,
            backward_sup: coarse[j].0,
            sup_node: coarse[j].1,
            refined_backward_sup: fine.as_ref().map(|f| f[j].0),
            refined_sup_node: fine.as_ref().map(|f| f[j].1),
        })
        .collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let max_refinement_change = fine.as_ref().map(|f| {
        f.iter()
            .zip(&coarse)
            .flat_map(|(a, b)| [(a.0, b.0), (a.1, b.1)])
            .map(|(a, b)| if b == 0.0 { (a - b).abs() } else { (a - b).abs() / b })
            .fold(0.0, f64::max)
    });
    Ok(ConvergenceTable {
        forward_fit: fit_log_log(&eps, &col(|r| r.forward_l2)),
        backward_fit: fit_log_log(&eps, &col(|r| r.backward_sup)),
        sup_node_fit: fit_log_log(&eps, &col(|r| r.sup_node)),
        max_refinement_change,
        rows,
    })
}

#[cfg(test)]
mod tests;
