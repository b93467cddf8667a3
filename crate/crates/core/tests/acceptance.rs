//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Every instance is read from the shipped `configs/` so the files double as
//! the reproducible definition of the runs.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rbsde_lab::config::ExperimentConfig;
use rbsde_lab::forward::deviation_stats;
use rbsde_lab::harness::{
    convergence_experiment, default_probes, estimate_rare_event_with, fit_ldp_slope, surfaces_for, ConvergenceSetup,
    SweepOptions, YRealization, YSource,
};
use rbsde_lab::pde::solve_obstacle_pde_with;
use rbsde_lab::rate::{backward_rate_with, minimize_forward_action_with, BackwardTarget, RateOptions};
use rbsde_lab::rbsde::{
    apriori_check, ratio_stability, solve_deterministic_limit, solve_rbsde_mc, RbsdeSolution, SkorohodReport,
};
use rbsde_lab::stats::fit_log_log;
use rbsde_lab::{CoefficientRegistry, ProblemSpec};

const SKOROHOD_TOL: f64 = 1e-8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn load(name: &str) -> (ExperimentConfig, ProblemSpec) {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let cfg = ExperimentConfig::parse(&text).unwrap_or_else(|e| panic!("{path}: {e}"));
    let spec = cfg.spec(&CoefficientRegistry::new()).unwrap();
    (cfg, spec)
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let out = run();
    let took = start.elapsed();
    let in_time = took <= limit;
    let pass = out.pass && in_time;
    let time_note = if in_time { String::new() } else { format!(" [over {}s budget]", limit.as_secs()) };
    println!(
        "{} criterion {id} {name}: {}; {:.1}s{time_note}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64()
    );
    results.push(pass);
}

fn forward_rate() -> Outcome {
    let (cfg, spec) = load("decay.toml");
    let fc = cfg.forward.as_ref().unwrap();
    let grid = spec.grid(cfg.problem.steps).unwrap();
    assert_eq!((grid.steps(), fc.paths), (400, 2000));
    let stats: Vec<_> = fc
        .eps
        .iter()
        .map(|&e| deviation_stats(&spec, e, &grid, fc.paths, cfg.master_seed()).unwrap())
        .collect();
    let fit = fit_log_log(&fc.eps, &stats.iter().map(|s| s.sup_dev_l2).collect::<Vec<_>>());
    Outcome {
        pass: (fit.slope - 1.0).abs() <= 0.15 && fit.r_squared >= 0.99,
        detail: format!("slope {:.4} (target 1 ± 0.15), R² {:.5}", fit.slope, fit.r_squared),
    }
}

fn backward_rate_put() -> Outcome {
    let (cfg, spec) = load("put.toml");
    let cc = cfg.convergence.as_ref().unwrap();
    let grid = spec.grid(cfg.problem.steps).unwrap();
    let eps_max = cc.eps.iter().copied().fold(0.0, f64::max);
    let mesh = cfg.mesh.build(&spec, cfg.problem.steps, eps_max).unwrap();
    assert_eq!((mesh.time().steps(), mesh.axes()[0].steps()), (400, 400));
    let probes = default_probes(&spec, &grid).unwrap();
    let setup = ConvergenceSetup {
        eps: &cc.eps,
        grid,
        paths: cc.paths,
        master_seed: cfg.master_seed(),
        probes: &probes,
        mesh: &mesh,
        refine: true,
        pde: cfg.mesh.options(),
    };
    let table = convergence_experiment(&spec, &setup).unwrap();
    let slope = table.sup_node_fit.slope;
    let change = table.max_refinement_change.unwrap();
    Outcome {
        pass: (0.35..=1.2).contains(&slope) && change < 0.3,
        detail: format!("sup-node slope {slope:.4} in [0.35, 1.2], refinement change {:.1}% < 30%", 100.0 * change),
    }
}

struct PutRuns {
    spec: ProblemSpec,
    /// ε = 0.04, M = 5·10⁴.
    consistency: RbsdeSolution,
    pde_value: f64,
    /// (ε, M) = (0.1, M₀), (0.05, M₀), (0.1, 2M₀), (0.05, 2M₀).
    stability: Vec<RbsdeSolution>,
}

fn put_runs() -> PutRuns {
    let (cfg, spec) = load("put.toml");
    let rc = cfg.rbsde.as_ref().unwrap();
    let grid = spec.grid(cfg.problem.steps).unwrap();
    let basis = rc.basis();
    assert_eq!((rc.eps, rc.paths, basis.degree, basis.include_obstacle), (0.04, 50_000, 4, true));
    let mesh = cfg.mesh.build(&spec, cfg.problem.steps, rc.eps).unwrap();
    let surface = solve_obstacle_pde_with(&spec, rc.eps, &mesh, &cfg.mesh.options()).unwrap();
    let pde_value = surface.eval_value(spec.t0(), spec.x0()).unwrap();
    let consistency = solve_rbsde_mc(&spec, rc.eps, &grid, rc.paths, basis, cfg.master_seed()).unwrap();
    let base = 20_000;
    let stability = [(0.1, base), (0.05, base), (0.1, 2 * base), (0.05, 2 * base)]
        .iter()
        .map(|&(e, m)| solve_rbsde_mc(&spec, e, &grid, m, basis, cfg.master_seed()).unwrap())
        .collect();
    PutRuns {
        spec,
        consistency,
        pde_value,
        stability,
    }
}

fn pde_mc_consistency(runs: &PutRuns) -> Outcome {
    let y = runs.consistency.start_value();
    let se = runs.consistency.start_se();
    let diff = (y - runs.pde_value).abs();
    Outcome {
        pass: diff <= 3.0 * se + 0.02,
        detail: format!(
            "LSMC {y:.5} ± {se:.5} vs PDE {:.5}: |diff| {diff:.5} ≤ {:.5}",
            runs.pde_value,
            3.0 * se + 0.02
        ),
    }
}

fn skorohod(runs: &PutRuns) -> Outcome {
    let mut reports: Vec<(String, SkorohodReport)> = Vec::new();
    reports.push(("lsmc eps=0.04".into(), runs.consistency.skorohod()));
    for s in &runs.stability {
        reports.push((format!("lsmc eps={} M={}", s.eps(), s.paths()), s.skorohod()));
    }
    for name in ["put.toml", "active_obstacle.toml", "decay.toml", "linear.toml"] {
        let (cfg, spec) = load(name);
        let grid = spec.grid(cfg.problem.steps).unwrap();
        reports.push((format!("limit {name}"), solve_deterministic_limit(&spec, &grid).unwrap().skorohod(&spec)));
    }
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.holds(SKOROHOD_TOL)).map(|(n, _)| n.as_str()).collect();
    let worst_gap = reports.iter().map(|(_, r)| r.min_obstacle_gap).fold(f64::INFINITY, f64::min);
    let worst_sum = reports.iter().map(|(_, r)| r.skorohod_sum).fold(0.0, f64::max);
    Outcome {
        pass: failed.is_empty(),
        detail: format!(
            "{} runs, min(Y − h) {worst_gap:.3e}, max Σ(Y − h)ΔK {worst_sum:.3e}{}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!(", violated by {failed:?}") }
        ),
    }
}

fn forward_ldp() -> Outcome {
    let (cfg, spec) = load("brownian_sup.toml");
    let lc = cfg.ldp.as_ref().unwrap();
    let rc = cfg.rate.as_ref().unwrap();
    let grid = spec.grid(cfg.problem.steps).unwrap();
    let rate = minimize_forward_action_with(&spec, &rc.event, &spec.grid(rc.steps.unwrap()).unwrap(), &rc.options()).unwrap();
    let opts = SweepOptions {
        rate_steps: lc.rate_steps,
        rate: RateOptions::default(),
    };
    let table = estimate_rare_event_with(&spec, &lc.event, &lc.eps, lc.paths, &grid, cfg.master_seed(), None, &opts).unwrap();
    let v = fit_ldp_slope(&table).unwrap();
    let rel = (v.limit + 0.125).abs() / 0.125;
    Outcome {
        pass: rel <= 0.2 && (rate.value - 0.125).abs() <= 1e-3,
        detail: format!(
            "extrapolated {:.5} ({:.1}% from −0.125), rate {:.6}",
            v.limit,
            100.0 * rel,
            rate.value
        ),
    }
}

fn backward_ldp() -> Outcome {
    let (cfg, spec) = load("linear.toml");
    let lc = cfg.ldp.as_ref().unwrap();
    let rc = cfg.rate.as_ref().unwrap();
    let grid = spec.grid(cfg.problem.steps).unwrap();
    let eps_max = lc.eps.iter().copied().fold(0.0, f64::max);
    let mesh = cfg.mesh.build(&spec, cfg.problem.steps, eps_max).unwrap();
    let pde = cfg.mesh.options();
    let u0 = solve_obstacle_pde_with(&spec, 0.0, &mesh, &pde).unwrap();
    let rate = backward_rate_with(
        &spec,
        BackwardTarget::Event(rc.event),
        &u0,
        &spec.grid(rc.steps.unwrap()).unwrap(),
        &rc.options(),
    )
    .unwrap();
    let surfaces = surfaces_for(&spec, &lc.eps, &mesh, &pde).unwrap();
    let src = YSource {
        realization: YRealization::Surfaces(&surfaces),
        limit: &u0,
    };
    let opts = SweepOptions {
        rate_steps: rc.steps.unwrap(),
        rate: rc.options(),
    };
    let table =
        estimate_rare_event_with(&spec, &lc.event, &lc.eps, lc.paths, &grid, cfg.master_seed(), Some(&src), &opts).unwrap();
    let v = fit_ldp_slope(&table).unwrap();
    let rel = (v.limit + rate.value).abs() / rate.value;
    Outcome {
        pass: rel <= 0.25 && (rate.value - 0.125).abs() <= 1e-3,
        detail: format!(
            "extrapolated {:.5} ({:.1}% from −rate), backward rate {:.6}",
            v.limit,
            100.0 * rel,
            rate.value
        ),
    }
}

/// Closed form on the active-obstacle instance: `χ(r) = e^{−r/2}`,
/// `g(x) = x + (0.2 − x/2)⁺`, `h(x) = 0.2 + x/2`, running max over a
/// 50× finer sampling of `[s, T]`.
fn deterministic_limit() -> Outcome {
    let (cfg, spec) = load("active_obstacle.toml");
    let grid = spec.grid(cfg.problem.steps).unwrap();
    let lim = solve_deterministic_limit(&spec, &grid).unwrap();
    let chi = |r: f64| (-r / 2.0).exp();
    let g = |x: f64| x + (0.2 - 0.5 * x).max(0.0);
    let h = |x: f64| 0.2 + 0.5 * x;
    let t1 = grid.t1();
    let fine = 50 * grid.steps();
    let mut err = 0.0f64;
    let mut active = 0;
    for k in 0..grid.len() {
        let s = grid.node(k);
        let mut m = g(chi(t1));
        for j in 0..=fine {
            let r = s + (t1 - s) * j as f64 / fine as f64;
            m = m.max(h(chi(r)));
        }
        if h(chi(s)) >= m - 1e-12 && s < t1 {
            active += 1;
        }
        err = err.max((lim.y.value(k) - m).abs());
    }
    // |d/dr h(χ(r))| + Lip(g)|χ'| ≤ 0.5·0.5 + 1·0.5 on [0, 1].
    let lipschitz = 0.75;
    let bound = 2.0 * grid.step() * lipschitz;
    Outcome {
        pass: err <= bound && active > 0,
        detail: format!("sup-node error {err:.3e} ≤ {bound:.3e}, obstacle binding at {active} nodes"),
    }
}

fn apriori_stability(runs: &PutRuns) -> Outcome {
    let reports: Vec<_> = runs.stability.iter().map(|s| apriori_check(s, &runs.spec).unwrap()).collect();
    let st = ratio_stability(&reports, 0.5);
    let ratios: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.ratio)).collect();
    Outcome {
        pass: st.stable,
        detail: format!("ratios [{}], variation {:.1}% < 50%", ratios.join(", "), 100.0 * st.variation),
    }
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let min = |m: u64| Duration::from_secs(60 * m);
    report(&mut results, 1, "forward deviation rate", min(1), forward_rate);
    report(&mut results, 2, "obstacle PDE rate in ε", min(5), backward_rate_put);
    let start = Instant::now();
    let runs = put_runs();
    let shared = start.elapsed();
    println!("     (LSMC runs shared by criteria 3, 4, 8: {:.1}s)", shared.as_secs_f64());
    report(&mut results, 3, "PDE and LSMC agree", Duration::MAX, || pde_mc_consistency(&runs));
    report(&mut results, 4, "Skorohod complementarity", Duration::MAX, || skorohod(&runs));
    report(&mut results, 5, "forward LDP slope", min(2), forward_ldp);
    report(&mut results, 6, "backward LDP slope", min(3), backward_ldp);
    report(&mut results, 7, "deterministic limit closed form", Duration::MAX, deterministic_limit);
    report(&mut results, 8, "a priori ratio stability", Duration::MAX, || apriori_stability(&runs));
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
