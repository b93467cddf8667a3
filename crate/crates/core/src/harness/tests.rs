use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::model::{Coefficient, Role};
use crate::pde::Axis;
use crate::rate::Functional;

fn brownian() -> ProblemSpec {
    ProblemSpec::builder(1).build().unwrap()
}

fn linear_instance() -> ProblemSpec {
    ProblemSpec::builder(1)
        .terminal(Coefficient::scalar_linear(Role::Terminal, 1, 1.0, 0.0))
        .build()
        .unwrap()
}

fn decay() -> ProblemSpec {
    ProblemSpec::builder(1)
        .start(vec![1.0])
        .drift(Coefficient::scalar_linear(Role::Drift, 1, -1.0, 0.0))
        .build()
        .unwrap()
}

fn phi_bar(z: f64) -> f64 {
    1.0 - Normal::standard().cdf(z)
}

fn sup_event(delta: f64) -> EventSpec {
    EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta })
}

fn quick() -> SweepOptions {
    SweepOptions {
        rate_steps: 50,
        ..SweepOptions::default()
    }
}

#[test]
fn reflection_principle_probability() {
    let spec = brownian();
    let g = spec.grid(4000).unwrap();
    let t = estimate_rare_event(&spec, &sup_event(0.5), &[0.05], 100_000, &g, 11, None).unwrap();
    let row = &t.rows[0];
    let exact = 2.0 * phi_bar(0.5 / 0.05f64.sqrt());
    assert!((exact - 0.0254).abs() < 1e-4);
    assert!((row.p_hat - exact).abs() <= 3.0 * row.se, "{} vs {exact} (se {})", row.p_hat, row.se);
    assert!((t.rate.value - 0.125).abs() <= 1e-3);
}

#[test]
fn nested_events_are_ordered_under_common_numbers() {
    let spec = decay();
    let g = spec.grid(100).unwrap();
    let eps = [0.2, 0.1, 0.05];
    let wide = estimate_rare_event_with(&spec, &sup_event(0.3), &eps, 2000, &g, 5, None, &quick()).unwrap();
    let narrow = estimate_rare_event_with(&spec, &sup_event(0.4), &eps, 2000, &g, 5, None, &quick()).unwrap();
    for (a, b) in narrow.rows.iter().zip(&wide.rows) {
        assert_eq!(a.eps, b.eps);
        assert!(a.hits <= b.hits);
    }
    assert!(narrow.rate.value >= wide.rate.value - 1e-6);
}

#[test]
fn rows_sorted_and_reproducible() {
    let spec = brownian();
    let g = spec.grid(50).unwrap();
    let eps = [0.05, 0.2, 0.1];
    let a = estimate_rare_event_with(&spec, &sup_event(0.5), &eps, 3000, &g, 7, None, &quick()).unwrap();
    let b = estimate_rare_event_with(&spec, &sup_event(0.5), &eps, 3000, &g, 7, None, &quick()).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.csv(), b.csv());
    assert!(a.rows.windows(2).all(|w| w[0].eps > w[1].eps));
    assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.p_hat)));
}

#[test]
fn impossible_event_is_flagged() {
    let spec = decay();
    let g = spec.grid(50).unwrap();
    let ev = EventSpec::on_x(0, Functional::TerminalAtLeast { level: 4.0 });
    let t = estimate_rare_event_with(&spec, &ev, &[0.01, 0.005, 0.002], 2000, &g, 3, None, &quick()).unwrap();
    assert!(t.rows.iter().all(|r| r.hits == 0 && r.too_few_hits));
    assert!(t.rows[0].eps_log_p.is_infinite());
    assert!(t.csv().contains("-inf"));
    assert_eq!(fit_ldp_slope(&t).unwrap_err().code(), "INSUFFICIENT_ROWS");
}

#[test]
fn zero_rate_event_limits_to_zero() {
    let spec = decay();
    let g = spec.grid(50).unwrap();
    let ev = EventSpec::on_x(0, Functional::TerminalInInterval { lo: -1.0, hi: 2.0 });
    let t = estimate_rare_event_with(&spec, &ev, &[0.2, 0.1, 0.05, 0.025], 4000, &g, 3, None, &quick()).unwrap();
    assert!(t.rows.windows(2).all(|w| w[1].p_hat >= w[0].p_hat));
    assert!(t.rows.last().unwrap().p_hat > 0.999);
    let v = fit_ldp_slope(&t).unwrap();
    assert!(t.rate.value < 1e-12);
    assert!(v.verdict.passed(), "{v:?}");
    assert!(v.limit.abs() <= v.band);
}

#[test]
fn extrapolation_of_exact_probabilities() {
    // ε log P for P = 2Φ̄(δ/√ε) carries an ε log ε correction that the fit absorbs
    let delta: f64 = 0.5;
    let rows: Vec<SweepRow> = [0.2f64, 0.1, 0.05]
        .iter()
        .map(|&e| {
            let p = 2.0 * phi_bar(delta / e.sqrt());
            let m = 100_000;
            let hits = (p * m as f64).round() as usize;
            SweepRow {
                eps: e,
                p_hat: p,
                se: wilson_se(hits, m),
                eps_log_p: e * p.ln(),
                paths: m,
                hits,
                too_few_hits: false,
                clamped: 0,
            }
        })
        .collect();
    let spec = brownian();
    let g = spec.grid(50).unwrap();
    let mut t = estimate_rare_event_with(&spec, &sup_event(delta), &[0.2], 1000, &g, 1, None, &quick()).unwrap();
    t.rows = rows;
    let v = fit_ldp_slope(&t).unwrap();
    assert!((v.limit + 0.125).abs() <= 0.1 * 0.125, "{}", v.limit);
    assert!(v.verdict.passed());
    assert!(v.upper_bound.holds && v.lower_bound.holds);
    let json = serde_json::to_string(&v).unwrap();
    assert!(json.starts_with("{\"limit\":"));
    assert!(json.contains("\"verdict\":\"PASS\""));
}

#[test]
fn y_terminal_event_through_surfaces() {
    let spec = linear_instance();
    let g = spec.grid(100).unwrap();
    let eps = [0.2, 0.1];
    let mesh = Mesh::new(spec.grid(100).unwrap(), vec![Axis::new(-3.0, 3.0, 120).unwrap()]).unwrap();
    let surfaces = surfaces_for(&spec, &eps, &mesh, &PdeOptions::default()).unwrap();
    let u0 = solve_obstacle_pde_with(&spec, 0.0, &mesh, &PdeOptions::default()).unwrap();
    let src = YSource {
        realization: YRealization::Surfaces(&surfaces),
        limit: &u0,
    };
    let ev = EventSpec::on_y(Functional::TerminalAtLeast { level: 0.5 });
    let t = estimate_rare_event_with(&spec, &ev, &eps, 20_000, &g, 2, Some(&src), &quick()).unwrap();
    for r in &t.rows {
        let exact = phi_bar(0.5 / r.eps.sqrt());
        assert!((r.p_hat - exact).abs() <= 3.0 * r.se + 1e-3, "ε={}: {} vs {exact}", r.eps, r.p_hat);
    }
    assert!((t.rate.value - 0.125).abs() <= 1e-3);
    // the forward event on X(T) sees the same streams and the same hits
    let x = estimate_rare_event_with(
        &spec,
        &EventSpec::on_x(0, Functional::TerminalAtLeast { level: 0.5 }),
        &eps,
        20_000,
        &g,
        2,
        None,
        &quick(),
    )
    .unwrap();
    for (a, b) in t.rows.iter().zip(&x.rows) {
        assert!(a.hits.abs_diff(b.hits) <= a.hits / 200 + 2);
    }
}

#[test]
fn y_event_without_source_rejected() {
    let spec = linear_instance();
    let g = spec.grid(20).unwrap();
    let ev = EventSpec::on_y(Functional::TerminalAtLeast { level: 0.5 });
    assert!(estimate_rare_event(&spec, &ev, &[0.1], 1000, &g, 0, None).is_err());
}

#[test]
fn convergence_table_shape() {
    let spec = decay();
    let g = spec.grid(100).unwrap();
    let eps = [0.16, 0.08, 0.04, 0.02];
    let margin = Mesh::noise_margin(&spec, 0.16, 6.0);
    let mesh = Mesh::around_flow(&spec, 40, 60, margin).unwrap();
    let probes = default_probes(&spec, &g).unwrap();
    let setup = ConvergenceSetup {
        eps: &eps,
        grid: g,
        paths: 500,
        master_seed: 4,
        probes: &probes,
        mesh: &mesh,
        refine: true,
        pde: PdeOptions::default(),
    };
    let t = convergence_experiment(&spec, &setup).unwrap();
    assert_eq!(t.rows.len(), 4);
    for r in &t.rows {
        assert!(r.forward_l2 >= 0.0 && r.backward_sup >= 0.0 && r.sup_node >= 0.0);
        // interpolation is a convex combination of node differences
        assert!(r.backward_sup <= r.sup_node + 1e-12);
        assert!(r.refined_sup_node.is_some());
    }
    assert!((t.forward_fit.slope - 1.0).abs() < 0.3);
    assert!(t.max_refinement_change.is_some());
    assert!(t.csv().lines().count() == 5);
    let short = ConvergenceSetup {
        eps: &eps[..3],
        ..setup.clone()
    };
    assert!(convergence_experiment(&spec, &short).is_err());
    let narrow = ConvergenceSetup {
        eps: &[0.16, 0.12, 0.08, 0.04],
        ..setup
    };
    assert!(convergence_experiment(&spec, &narrow).is_err());
}
