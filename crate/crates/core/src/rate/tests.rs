use super::*;
use crate::model::{Coefficient, Role};
use crate::pde::{solve_obstacle_pde, Axis, Mesh};

fn brownian() -> ProblemSpec {
    ProblemSpec::builder(1).build().unwrap()
}

fn decay() -> ProblemSpec {
    ProblemSpec::builder(1)
        .start(vec![1.0])
        .drift(Coefficient::scalar_linear(Role::Drift, 1, -1.0, 0.0))
        .build()
        .unwrap()
}

fn linear_instance() -> ProblemSpec {
    ProblemSpec::builder(1)
        .terminal(Coefficient::scalar_linear(Role::Terminal, 1, 1.0, 0.0))
        .build()
        .unwrap()
}

fn linear_u0(spec: &ProblemSpec, steps: usize) -> ValueSurface {
    let mesh = Mesh::new(spec.grid(steps).unwrap(), vec![Axis::new(-3.0, 3.0, 120).unwrap()]).unwrap();
    solve_obstacle_pde(spec, 0.0, &mesh).unwrap()
}

#[test]
fn straight_line_action_is_exact() {
    let spec = brownian();
    for steps in [7, 50, 333] {
        let g = spec.grid(steps).unwrap();
        let xi = SpacePath::from_fn(g, 1, |s, x| x[0] = 0.7 * s);
        assert!((forward_action(&spec, &xi).unwrap() - 0.245).abs() < 1e-12);
    }
}

#[test]
fn constant_path_against_decay() {
    // v = 0 − (−1) = 1 along ξ ≡ 1
    let spec = decay();
    let g = spec.grid(40).unwrap();
    let xi = SpacePath::from_fn(g, 1, |_, x| x[0] = 1.0);
    assert!((forward_action(&spec, &xi).unwrap() - 0.5).abs() < 1e-12);
    let v = control_of(&spec, &xi);
    assert!(v.values().iter().all(|c| (c - 1.0).abs() < 1e-12));
}

#[test]
fn flow_has_negligible_action() {
    let spec = decay();
    let g = spec.grid(4000).unwrap();
    let chi = solve_flow(&spec, &g).unwrap();
    assert!(forward_action(&spec, &chi).unwrap() <= 1e-8);
    let euler = euler_flow(&spec, &g).unwrap();
    assert!(forward_action(&spec, &euler).unwrap() < 1e-25);
}

#[test]
fn wrong_start_rejected() {
    let spec = decay();
    let g = spec.grid(10).unwrap();
    let xi = SpacePath::from_fn(g, 1, |_, x| x[0] = 0.0);
    assert_eq!(forward_action(&spec, &xi).unwrap_err().code(), "WRONG_START");
}

#[test]
fn action_changes_at_first_order_under_refinement() {
    let spec = decay();
    let at = |steps| {
        let g = spec.grid(steps).unwrap();
        forward_action(&spec, &SpacePath::from_fn(g, 1, |s, x| x[0] = (2.0 * s).cos())).unwrap()
    };
    let (a, b, c) = (at(100), at(200), at(400));
    let ratio = (a - b) / (b - c);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn terminal_event_gives_straight_line() {
    let spec = brownian();
    let g = spec.grid(100).unwrap();
    let ev = EventSpec::on_x(0, Functional::TerminalAtLeast { level: 0.5 });
    let r = minimize_forward_action(&spec, &ev, &g).unwrap();
    assert!((r.value - 0.125).abs() <= 1e-3, "{}", r.value);
    assert!(r.diagnostics.converged);
    for k in 0..g.len() {
        assert!((r.minimizer.point(k)[0] - 0.5 * g.node(k)).abs() < 1e-3);
    }
    assert!((forward_action(&spec, &r.minimizer).unwrap() - r.value).abs() < 1e-12);
}

#[test]
fn sup_event_matches_hitting_time_search() {
    let spec = brownian();
    let g = spec.grid(100).unwrap();
    let delta = 0.5;
    let ev = EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta });
    let r = minimize_forward_action(&spec, &ev, &g).unwrap();
    // cheapest path reaching δ at node k costs δ²/(2 s_k)
    let oracle = (1..g.len())
        .map(|k| delta * delta / (2.0 * g.node(k)))
        .fold(f64::INFINITY, f64::min);
    assert!((r.value - oracle).abs() <= 1e-3, "{} vs {oracle}", r.value);
    assert!((r.value - 0.125).abs() <= 1e-3);
    let top = r.minimizer.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((r.minimizer.point(g.steps())[0] - top).abs() < 1e-9);
}

#[test]
fn ornstein_uhlenbeck_terminal_rate() {
    // dX = −X ds + √ε dW from 1: X(1) has mean e^{−1}, variance (1 − e^{−2})/2
    let spec = decay();
    let g = spec.grid(400).unwrap();
    let c = 1.0;
    let r = minimize_forward_action(&spec, &EventSpec::on_x(0, Functional::TerminalAtLeast { level: c }), &g).unwrap();
    let m = (-1.0f64).exp();
    let exact = (c - m).powi(2) / (1.0 - (-2.0f64).exp());
    assert!((r.value - exact).abs() <= 5e-3 * exact, "{} vs {exact}", r.value);
}

#[test]
fn event_met_by_flow_costs_nothing() {
    let spec = decay();
    let g = spec.grid(50).unwrap();
    let ev = EventSpec::on_x(0, Functional::TerminalInInterval { lo: 0.0, hi: 0.5 });
    let r = minimize_forward_action(&spec, &ev, &g).unwrap();
    assert!(r.value < 1e-20);
    assert_eq!(r.diagnostics.best_start, 0);
}

#[test]
fn nested_events_order_rates() {
    let spec = brownian();
    let g = spec.grid(60).unwrap();
    let a = minimize_forward_action(&spec, &EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta: 0.6 }), &g)
        .unwrap();
    let b = minimize_forward_action(&spec, &EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta: 0.5 }), &g)
        .unwrap();
    assert!(a.value >= b.value - 1e-6);
}

#[test]
fn deterministic_image_has_zero_backward_rate() {
    let spec = linear_instance();
    let u0 = linear_u0(&spec, 100);
    let g = spec.grid(50).unwrap();
    let target = u0.apply_g(&solve_flow(&spec, &g).unwrap()).unwrap();
    let r = backward_rate(&spec, BackwardTarget::Path(&target), &u0, &g).unwrap();
    assert!(r.value < 1e-12);
}

#[test]
fn pointwise_inversion_for_linear_surface() {
    let spec = linear_instance();
    let u0 = linear_u0(&spec, 100);
    let g = spec.grid(80).unwrap();
    let target = ScalarPath::from_fn(g, |s| 0.4 * s + 0.3 * (std::f64::consts::PI * s).sin());
    let xi = SpacePath::new(g, 1, target.values().to_vec()).unwrap();
    let direct = forward_action(&spec, &xi).unwrap();
    let r = backward_rate(&spec, BackwardTarget::Path(&target), &u0, &g).unwrap();
    assert!((r.value - direct).abs() <= 1e-6, "{} vs {direct}", r.value);
}

#[test]
fn backward_terminal_event_on_linear_instance() {
    let spec = linear_instance();
    let u0 = linear_u0(&spec, 100);
    let g = spec.grid(100).unwrap();
    let r = backward_rate(
        &spec,
        BackwardTarget::Event(EventSpec::on_y(Functional::TerminalAtLeast { level: 0.5 })),
        &u0,
        &g,
    )
    .unwrap();
    assert!((r.value - 0.125).abs() <= 1e-3, "{}", r.value);
}

#[test]
fn unreachable_level_is_infinite() {
    let spec = linear_instance();
    let u0 = linear_u0(&spec, 50);
    let g = spec.grid(40).unwrap();
    let r = backward_rate(
        &spec,
        BackwardTarget::Event(EventSpec::on_y(Functional::TerminalAtLeast { level: 5.0 })),
        &u0,
        &g,
    )
    .unwrap();
    assert!(r.is_infinite());
    assert!(r.feasibility_residual > 1e-4);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.starts_with("{\"value\":\"inf\""), "{json}");
}

#[test]
fn mismatched_target_grid_rejected() {
    let spec = linear_instance();
    let u0 = linear_u0(&spec, 50);
    let target = ScalarPath::from_fn(spec.grid(20).unwrap(), |s| s);
    let err = backward_rate(&spec, BackwardTarget::Path(&target), &u0, &spec.grid(40).unwrap()).unwrap_err();
    assert_eq!(err.code(), "INCOMPATIBLE_GRID");
}

#[test]
fn feasible_paths_cost_at_least_the_rate() {
    use rand::{Rng, SeedableRng};
    let spec = brownian();
    let g = spec.grid(50).unwrap();
    let ev = EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta: 0.5 });
    let r = minimize_forward_action(&spec, &ev, &g).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let hit: f64 = rng.random_range(0.2..1.0);
        let wiggle: f64 = rng.random_range(-0.3..0.3);
        let xi = SpacePath::from_fn(g, 1, |s, x| {
            x[0] = 0.5 * (s / hit).min(1.0) + wiggle * (std::f64::consts::PI * s).sin() * (s - hit).abs();
        });
        let path: Vec<f64> = xi.values().to_vec();
        let ok = ev.holds(&path, &vec![0.0; path.len()]);
        if ok {
            assert!(forward_action(&spec, &xi).unwrap() >= r.value - 1e-6);
        }
    }
}

#[test]
fn perturbation_bound_near_minimizer() {
    // A(ξ + ηφ) − A(ξ) = η Σ v·w Δ + ½η² Σ |w|² Δ with w_k = Δφ_k/Δ − (b(ξ_k + ηφ_k) − b(ξ_k))/η;
    // for b = −x, |w| ≤ |Δφ/Δ| + |φ|, so C = max(‖v‖‖w‖, ½‖w‖²) bounds the change
    let spec = decay();
    let g = spec.grid(100).unwrap();
    let r = minimize_forward_action(&spec, &EventSpec::on_x(0, Functional::TerminalAtLeast { level: 0.8 }), &g)
        .unwrap();
    let phi = |s: f64| (std::f64::consts::PI * s).sin();
    let dt = g.step();
    let wmax: Vec<f64> = (0..g.steps())
        .map(|k| ((phi(g.node(k + 1)) - phi(g.node(k))) / dt).abs() + phi(g.node(k)).abs())
        .collect();
    let w2: f64 = wmax.iter().map(|w| w * w * dt).sum();
    let v2: f64 = (0..g.steps()).map(|k| r.control.point(k)[0].powi(2) * dt).sum();
    let c = (v2.sqrt() * w2.sqrt()).max(0.5 * w2);
    for eta in [1e-3, 1e-2, 5e-2] {
        let mut xi = r.minimizer.clone();
        for k in 1..g.len() {
            xi.point_mut(k)[0] += eta * phi(g.node(k));
        }
        let d = (forward_action(&spec, &xi).unwrap() - r.value).abs();
        assert!(d <= c * (eta + eta * eta) + 1e-12, "η={eta}: {d} > {}", c * (eta + eta * eta));
    }
}
