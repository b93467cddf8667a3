use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use rbsde_lab::config::{ExperimentConfig, YMethod};
use rbsde_lab::forward::{deviation_stats, simulate_forward, solve_flow, ForwardRunStats};
use rbsde_lab::harness::{
    convergence_experiment, default_probes, estimate_rare_event_with, fit_ldp_slope, surfaces_for,
    ConvergenceSetup, ConvergenceTable, LdpVerdict, SweepOptions, SweepTable, Verdict, YRealization, YSource,
};
use rbsde_lab::model::{make_noise, validate_spec, SpaceBox};
use rbsde_lab::pde::{solve_obstacle_pde_with, write_surface_binary, write_surface_csv, SchemeDiagnostics};
use rbsde_lab::rate::{backward_rate_with, minimize_forward_action_with, serialize_rate, BackwardTarget, Target};
use rbsde_lab::rbsde::{apriori_check, solve_deterministic_limit, solve_rbsde_mc, AprioriReport, SkorohodReport};
use rbsde_lab::stats::{fit_log_log, LineFit};
use rbsde_lab::{CoefficientRegistry, Error, ProblemSpec, SpacePath};

use crate::output::RunDir;
use crate::{Common, DumpFormat, Loaded};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io(_) => "IO_ERROR",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Outcome {
    pub summary: String,
    pub pass: bool,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self { summary, pass: true }
    }
}

/// Noise level sizing the box of the noiseless surface used by `rate`.
const RATE_MESH_EPS: f64 = 0.25;

fn missing(section: &str) -> CliError {
    CliError::Core(Error::Config(format!("missing [{section}] section")))
}

/// Creates the output directory, runs `body`, then writes the manifest with
/// the final status.
fn run_in<F>(name: &str, common: &Common, loaded: &Loaded, body: F) -> Result<Outcome>
where
    F: FnOnce(&ExperimentConfig, &ProblemSpec, &mut RunDir) -> Result<Outcome>,
{
    let cfg = &loaded.config;
    let spec = cfg.spec(&CoefficientRegistry::new())?;
    let dir: PathBuf = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut run = RunDir::create(&dir)?;
    let result = body(cfg, &spec, &mut run);
    let status = match &result {
        Ok(o) if o.pass => "PASS",
        Ok(_) => "FAIL",
        Err(e) => e.code(),
    };
    run.finish(
        name,
        &common.config,
        &cfg.to_toml(),
        &loaded.file_bytes,
        &loaded.overrides,
        cfg.master_seed(),
        common.threads,
        status,
    )?;
    result
}

fn space_header(n: usize, prefix: &str) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

fn path_rows(p: &SpacePath) -> impl Iterator<Item = (f64, &[f64])> {
    (0..p.grid().len()).map(move |k| (p.grid().node(k), p.point(k)))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|v| format!(",{v}")).collect()
}

pub fn validate(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("validate", common, loaded, |cfg, spec, run| {
        let v = &cfg.validate;
        let space = SpaceBox::cube(spec.dim(), v.box_lo, v.box_hi)?;
        match validate_spec(spec, &space, v.samples) {
            Ok(report) => {
                run.write_json("validation.json", &report)?;
                let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
                Ok(Outcome::ok(format!("all checks pass ({})", names.join(", "))))
            }
            Err(Error::RejectedSpec(report)) => {
                run.write_json("validation.json", &report)?;
                Err(Error::RejectedSpec(report).into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

#[derive(Serialize)]
struct ForwardSummary<'a> {
    rows: &'a [ForwardRunStats],
    l2_fit: Option<LineFit>,
}

pub fn forward(common: &Common, loaded: &Loaded, trajectories: Option<usize>) -> Result<Outcome> {
    run_in("forward", common, loaded, |cfg, spec, run| {
        let fc = cfg.forward.as_ref().ok_or_else(|| missing("forward"))?;
        let grid = spec.grid(cfg.problem.steps)?;
        let seed = cfg.master_seed();
        let rows = fc
            .eps
            .iter()
            .map(|&e| deviation_stats(spec, e, &grid, fc.paths, seed))
            .collect::<rbsde_lab::Result<Vec<_>>>()?;
        let mut csv = format!("{}\n", ForwardRunStats::CSV_HEADER);
        for r in &rows {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        run.write("deviation.csv", csv.as_bytes())?;
        let l2_fit = (rows.len() >= 2 && rows.iter().all(|r| r.sup_dev_l2 > 0.0)).then(|| {
            let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
            let v: Vec<f64> = rows.iter().map(|r| r.sup_dev_l2).collect();
            fit_log_log(&e, &v)
        });
        run.write_json("forward.json", &ForwardSummary { rows: &rows, l2_fit })?;
        if let Some(count) = trajectories {
            let mut s = format!("eps,path,time{}\n", space_header(spec.dim(), "X"));
            for &e in &fc.eps {
                for i in 0..count.min(fc.paths) {
                    let x = simulate_forward(spec, e, &grid, &make_noise(seed, i as u64, &grid, spec.dim()))?;
                    for (t, p) in path_rows(&x) {
                        s.push_str(&format!("{e},{i},{t}{}\n", join(p)));
                    }
                }
            }
            run.write("trajectories.csv", s.as_bytes())?;
        }
        let slope = l2_fit.map(|f| format!(", L2 slope {:.4} (R² {:.4})", f.slope, f.r_squared)).unwrap_or_default();
        Ok(Outcome::ok(format!("{} ε values, M = {}{slope}", rows.len(), fc.paths)))
    })
}

pub fn flow(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("flow", common, loaded, |cfg, spec, run| {
        let grid = spec.grid(cfg.problem.steps)?;
        let chi = solve_flow(spec, &grid)?;
        let mut s = format!("time{}\n", space_header(spec.dim(), "x"));
        for (t, p) in path_rows(&chi) {
            s.push_str(&format!("{t}{}\n", join(p)));
        }
        run.write("flow.csv", s.as_bytes())?;
        Ok(Outcome::ok(format!("χ(T) = {:?}", chi.point(grid.steps()))))
    })
}

#[derive(Serialize)]
struct AxisSummary {
    lo: f64,
    hi: f64,
    steps: usize,
}

#[derive(Serialize)]
struct PdeSummary<'a> {
    eps: f64,
    u_start: f64,
    gradient_start: Option<Vec<f64>>,
    time_steps: usize,
    axes: Vec<AxisSummary>,
    diagnostics: &'a SchemeDiagnostics,
    dump: Option<String>,
}

pub fn pde(common: &Common, loaded: &Loaded, dump: Option<DumpFormat>) -> Result<Outcome> {
    run_in("pde", common, loaded, |cfg, spec, run| {
        let pc = cfg.pde.as_ref().ok_or_else(|| missing("pde"))?;
        let mesh = cfg.mesh.build(spec, cfg.problem.steps, pc.eps)?;
        let u = solve_obstacle_pde_with(spec, pc.eps, &mesh, &cfg.mesh.options())?;
        let grid = spec.grid(cfg.problem.steps)?;
        let chi = solve_flow(spec, &grid)?;
        let along = u.apply_g(&chi)?;
        let mut s = format!("time{},u\n", space_header(spec.dim(), "x"));
        for (k, (t, p)) in path_rows(&chi).enumerate() {
            s.push_str(&format!("{t}{},{}\n", join(p), along.value(k)));
        }
        run.write("value_along_flow.csv", s.as_bytes())?;
        let dump_name = match dump {
            Some(DumpFormat::Csv) => {
                let mut buf = Vec::new();
                write_surface_csv(&u, &mut buf)?;
                run.write("surface.csv", &buf)?;
                Some("surface.csv".to_string())
            }
            Some(DumpFormat::Binary) => {
                let mut buf = Vec::new();
                write_surface_binary(&u, &mut buf)?;
                run.write("surface.bin", &buf)?;
                Some("surface.bin".to_string())
            }
            None => None,
        };
        let u_start = u.eval_value(spec.t0(), spec.x0())?;
        let summary = PdeSummary {
            eps: pc.eps,
            u_start,
            gradient_start: u.gradient(spec.t0(), spec.x0()).ok(),
            time_steps: mesh.time().steps(),
            axes: mesh
                .axes()
                .iter()
                .map(|a| AxisSummary {
                    lo: a.lo(),
                    hi: a.hi(),
                    steps: a.steps(),
                })
                .collect(),
            diagnostics: u.diagnostics(),
            dump: dump_name,
        };
        run.write_json("pde.json", &summary)?;
        Ok(Outcome::ok(format!(
            "u(t, x) = {u_start:.6} at ε = {}, {} substeps per level",
            pc.eps,
            u.diagnostics().substeps_per_level
        )))
    })
}

#[derive(Serialize)]
struct RbsdeSummary {
    eps: f64,
    paths: usize,
    degree: usize,
    obstacle_basis: bool,
    start_value: f64,
    start_se: f64,
    obstacle_dropped_nodes: usize,
    skorohod: SkorohodReport,
    apriori: AprioriReport,
}

pub fn rbsde(common: &Common, loaded: &Loaded, trajectories: Option<usize>) -> Result<Outcome> {
    run_in("rbsde", common, loaded, |cfg, spec, run| {
        let rc = cfg.rbsde.as_ref().ok_or_else(|| missing("rbsde"))?;
        let grid = spec.grid(cfg.problem.steps)?;
        let sol = solve_rbsde_mc(spec, rc.eps, &grid, rc.paths, rc.basis(), cfg.master_seed())?;
        run.write("rbsde_nodes.csv", sol.node_csv().as_bytes())?;
        if let Some(n) = trajectories {
            run.write("trajectories.csv", sol.trajectory_csv(n).as_bytes())?;
        }
        let summary = RbsdeSummary {
            eps: rc.eps,
            paths: rc.paths,
            degree: rc.degree,
            obstacle_basis: rc.obstacle_basis,
            start_value: sol.start_value(),
            start_se: sol.start_se(),
            obstacle_dropped_nodes: sol.obstacle_dropped_nodes(),
            skorohod: sol.skorohod(),
            apriori: apriori_check(&sol, spec)?,
        };
        run.write_json("rbsde.json", &summary)?;
        Ok(Outcome::ok(format!(
            "Y(t) = {:.6} ± {:.6} (M = {}), Skorohod sum {:.3e}",
            summary.start_value, summary.start_se, rc.paths, summary.skorohod.skorohod_sum
        )))
    })
}

pub fn limit(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("limit", common, loaded, |cfg, spec, run| {
        let grid = spec.grid(cfg.problem.steps)?;
        let lim = solve_deterministic_limit(spec, &grid)?;
        let mut s = format!("time{},Y,K\n", space_header(spec.dim(), "chi"));
        for (k, (t, p)) in path_rows(&lim.flow).enumerate() {
            s.push_str(&format!("{t}{},{},{}\n", join(p), lim.y.value(k), lim.k.value(k)));
        }
        run.write("limit.csv", s.as_bytes())?;
        let report = lim.skorohod(spec);
        run.write_json("limit.json", &report)?;
        Ok(Outcome::ok(format!(
            "Y(t) = {:.6}, K(T) = {:.6}",
            lim.y.value(0),
            lim.k.value(grid.steps())
        )))
    })
}

#[derive(Serialize)]
struct RateSummary<'a> {
    #[serde(serialize_with = "serialize_rate")]
    value: f64,
    feasibility_residual: f64,
    iterations: usize,
    minimizer_csv_path: String,
    flag: Option<&'static str>,
    diagnostics: &'a rbsde_lab::rate::OptimizerDiagnostics,
}

pub fn rate(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("rate", common, loaded, |cfg, spec, run| {
        let rc = cfg.rate.as_ref().ok_or_else(|| missing("rate"))?;
        let grid = spec.grid(rc.steps.unwrap_or(cfg.problem.steps))?;
        let opts = rc.options();
        let r = match rc.event.target {
            Target::X { .. } => minimize_forward_action_with(spec, &rc.event, &grid, &opts)?,
            Target::Y => {
                let mesh = cfg.mesh.build(spec, cfg.problem.steps, RATE_MESH_EPS)?;
                let u0 = solve_obstacle_pde_with(spec, 0.0, &mesh, &cfg.mesh.options())?;
                backward_rate_with(spec, BackwardTarget::Event(rc.event), &u0, &grid, &opts)?
            }
        };
        let n = spec.dim();
        let mut s = format!("time{}{}\n", space_header(n, "xi"), space_header(n, "v"));
        for k in 0..grid.len() {
            s.push_str(&format!(
                "{}{}{}\n",
                grid.node(k),
                join(r.minimizer.point(k)),
                join(r.control.point(k))
            ));
        }
        let p = run.write("minimizer.csv", s.as_bytes())?;
        let summary = RateSummary {
            value: r.value,
            feasibility_residual: r.feasibility_residual,
            iterations: r.diagnostics.iterations,
            minimizer_csv_path: p.display().to_string(),
            flag: r.flag(),
            diagnostics: &r.diagnostics,
        };
        run.write_json("rate.json", &summary)?;
        let flag = r.flag().map(|f| format!(" [{f}]")).unwrap_or_default();
        Ok(Outcome::ok(format!("rate = {}{flag}", r.value)))
    })
}

#[derive(Serialize)]
struct SweepArtifact<'a> {
    table: &'a SweepTable,
    verdict: &'a LdpVerdict,
}

pub fn ldp_sweep(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("ldp-sweep", common, loaded, |cfg, spec, run| {
        let lc = cfg.ldp.as_ref().ok_or_else(|| missing("ldp"))?;
        let grid = spec.grid(cfg.problem.steps)?;
        let opts = SweepOptions {
            rate_steps: lc.rate_steps,
            ..SweepOptions::default()
        };
        let seed = cfg.master_seed();
        let table = match lc.event.target {
            Target::X { .. } => estimate_rare_event_with(spec, &lc.event, &lc.eps, lc.paths, &grid, seed, None, &opts)?,
            Target::Y => {
                let eps_max = lc.eps.iter().copied().fold(0.0, f64::max);
                let mesh = cfg.mesh.build(spec, cfg.problem.steps, eps_max)?;
                let pde = cfg.mesh.options();
                let u0 = solve_obstacle_pde_with(spec, 0.0, &mesh, &pde)?;
                let surfaces;
                let realization = match lc.realization {
                    YMethod::Surfaces => {
                        surfaces = surfaces_for(spec, &lc.eps, &mesh, &pde)?;
                        YRealization::Surfaces(&surfaces)
                    }
                    YMethod::Lsmc => YRealization::Lsmc(rbsde_lab::rbsde::RegressionBasis {
                        degree: lc.degree,
                        include_obstacle: lc.obstacle_basis,
                    }),
                };
                let src = YSource {
                    realization,
                    limit: &u0,
                };
                estimate_rare_event_with(spec, &lc.event, &lc.eps, lc.paths, &grid, seed, Some(&src), &opts)?
            }
        };
        run.write("sweep.csv", table.csv().as_bytes())?;
        let verdict = fit_ldp_slope(&table);
        let verdict = match verdict {
            Ok(v) => v,
            Err(e) => {
                run.write_json("sweep.json", &table)?;
                return Err(e.into());
            }
        };
        run.write_json("sweep.json", &SweepArtifact {
            table: &table,
            verdict: &verdict,
        })?;
        run.write_json("verdict.json", &verdict)?;
        Ok(Outcome {
            summary: format!(
                "limit {:.5} vs prediction {:.5} (band {:.5}): {}",
                verdict.limit, verdict.rate_prediction, verdict.band, verdict.verdict
            ),
            pass: verdict.verdict.passed(),
        })
    })
}

#[derive(Serialize)]
struct ConvergenceVerdict<'a> {
    table: &'a ConvergenceTable,
    forward_band: [f64; 2],
    backward_band: [f64; 2],
    forward_ok: bool,
    backward_ok: bool,
    sup_node_ok: bool,
    /// Refined entries within 30% of the coarse ones.
    refinement_ok: Option<bool>,
    verdict: Verdict,
}

pub fn convergence(common: &Common, loaded: &Loaded) -> Result<Outcome> {
    run_in("convergence", common, loaded, |cfg, spec, run| {
        let cc = cfg.convergence.as_ref().ok_or_else(|| missing("convergence"))?;
        let grid = spec.grid(cfg.problem.steps)?;
        let eps_max = cc.eps.iter().copied().fold(0.0, f64::max);
        let mesh = cfg.mesh.build(spec, cfg.problem.steps, eps_max)?;
        let probes = default_probes(spec, &grid)?;
        let setup = ConvergenceSetup {
            eps: &cc.eps,
            grid,
            paths: cc.paths,
            master_seed: cfg.master_seed(),
            probes: &probes,
            mesh: &mesh,
            refine: cc.refine,
            pde: cfg.mesh.options(),
        };
        let table = convergence_experiment(spec, &setup)?;
        run.write("convergence.csv", table.csv().as_bytes())?;
        let within = |s: f64, b: [f64; 2]| (b[0]..=b[1]).contains(&s);
        let forward_ok = within(table.forward_fit.slope, cc.forward_band);
        let backward_ok = within(table.backward_fit.slope, cc.backward_band);
        let sup_node_ok = within(table.sup_node_fit.slope, cc.backward_band);
        let refinement_ok = table.max_refinement_change.map(|c| c < 0.3);
        let pass = forward_ok && backward_ok && sup_node_ok && refinement_ok.unwrap_or(true);
        let v = ConvergenceVerdict {
            table: &table,
            forward_band: cc.forward_band,
            backward_band: cc.backward_band,
            forward_ok,
            backward_ok,
            sup_node_ok,
            refinement_ok,
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        };
        run.write_json("convergence.json", &v)?;
        Ok(Outcome {
            summary: format!(
                "slopes forward {:.4}, backward {:.4}, sup-node {:.4}",
                table.forward_fit.slope, table.backward_fit.slope, table.sup_node_fit.slope
            ),
            pass,
        })
    })
}
