//! Freidlin–Wentzell action `½∫|ξ′ − b(s, ξ)|² ds` on grid paths, its
//! minimization over threshold events, and the contraction rate for `Y`
//! obtained by composing with the noiseless value surface.

mod event;
mod optimize;

pub use event::{EventSpec, Functional, Target};
pub use optimize::RateOptions;
pub(crate) use optimize::clamped_g;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forward::{simulate_forward, solve_flow};
use crate::model::{make_noise, ProblemSpec, ScalarPath, SpacePath, TimeGrid};
use crate::pde::ValueSurface;
use optimize::{Constraint, Objective};

/// One penalty level of the escalation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PenaltyStep {
    pub weight: f64,
    pub action: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerDiagnostics {
    /// Iterations summed over levels for the winning start.
    pub iterations: usize,
    /// Preconditioned gradient norm at the end of the last level.
    pub final_gradient_norm: f64,
    pub penalty_trail: Vec<PenaltyStep>,
    pub starts: usize,
    pub best_start: usize,
    /// Gradient and feasibility tolerances met.
    pub converged: bool,
}

/// Rate value with its minimizer; `value` is `+∞` when no path meets the
/// constraint at the largest penalty weight.
#[derive(Clone, Debug)]
pub struct RateResult {
    pub value: f64,
    pub minimizer: SpacePath,
    /// `v_k = (ξ_{k+1} − ξ_k)/Δ − b(s_k, ξ_k)`; the last node repeats `v_{N−1}`.
    pub control: SpacePath,
    pub feasibility_residual: f64,
    pub diagnostics: OptimizerDiagnostics,
}

impl RateResult {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }

    /// `NOT_CONVERGED` when the tolerances were missed, otherwise `None`.
    pub fn flag(&self) -> Option<&'static str> {
        (!self.diagnostics.converged).then_some("NOT_CONVERGED")
    }
}

/// JSON encodes `+∞` as the string `"inf"`.
pub fn serialize_rate<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

struct Rate(f64);

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_rate(&self.0, s)
    }
}

impl Serialize for RateResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("RateResult", 4)?;
        st.serialize_field("value", &Rate(self.value))?;
        st.serialize_field("feasibility_residual", &self.feasibility_residual)?;
        st.serialize_field("flag", &self.flag())?;
        st.serialize_field("diagnostics", &self.diagnostics)?;
        st.end()
    }
}

fn check_path(spec: &ProblemSpec, xi: &SpacePath) -> Result<()> {
    spec.check_grid(xi.grid())?;
    if xi.dim() != spec.dim() {
        return Err(Error::invalid(format!(
            "path has dimension {}, problem has {}",
            xi.dim(),
            spec.dim()
        )));
    }
    let start = xi.point(0);
    let tol = 1e-12;
    if start.iter().zip(spec.x0()).any(|(a, b)| (a - b).abs() > tol * (1.0 + b.abs())) {
        return Err(Error::WrongStart {
            expected: spec.x0().to_vec(),
            found: start.to_vec(),
        });
    }
    Ok(())
}

/// `v_k = (ξ_{k+1} − ξ_k)/Δ − b(s_k, ξ_k)` for `k < N`.
pub fn control_of(spec: &ProblemSpec, xi: &SpacePath) -> SpacePath {
    let g = *xi.grid();
    let n = xi.dim();
    let dt = g.step();
    let mut b = vec![0.0; n];
    let mut v = Vec::with_capacity(g.len() * n);
    for k in 0..g.steps() {
        spec.drift(g.node(k), xi.point(k), &mut b);
        for i in 0..n {
            v.push((xi.point(k + 1)[i] - xi.point(k)[i]) / dt - b[i]);
        }
    }
    let last = v[v.len() - n..].to_vec();
    v.extend_from_slice(&last);
    SpacePath::new(g, n, v).expect("control shape")
}

/// `½ Σ |v_k|² Δ`.
pub fn forward_action(spec: &ProblemSpec, xi: &SpacePath) -> Result<f64> {
    check_path(spec, xi)?;
    Ok(Objective::action_of(spec, xi.grid(), xi.values()))
}

/// Euler polygon of the flow, the zero-action path on the grid.
fn euler_flow(spec: &ProblemSpec, grid: &TimeGrid) -> Result<SpacePath> {
    simulate_forward(spec, 0.0, grid, &make_noise(0, 0, grid, spec.dim()))
}

/// `inf { I(ξ) : ξ ∈ Γ }` over an event on the forward state.
pub fn minimize_forward_action(spec: &ProblemSpec, event: &EventSpec, grid: &TimeGrid) -> Result<RateResult> {
    minimize_forward_action_with(spec, event, grid, &RateOptions::default())
}

pub fn minimize_forward_action_with(
    spec: &ProblemSpec,
    event: &EventSpec,
    grid: &TimeGrid,
    opts: &RateOptions,
) -> Result<RateResult> {
    event.check()?;
    spec.check_grid(grid)?;
    let coordinate = match event.target {
        Target::X { coordinate } if coordinate < spec.dim() => coordinate,
        Target::X { coordinate } => {
            return Err(Error::invalid(format!(
                "event coordinate {coordinate} out of range for dimension {}",
                spec.dim()
            )))
        }
        Target::Y => return Err(Error::invalid("Y events go through backward_rate")),
    };
    let flow = solve_flow(spec, grid)?;
    let reference = flow.coordinate(coordinate);
    let constraint = Constraint::Event {
        event: *event,
        reference,
        surface: None,
        coordinate,
    };
    let objective = Objective::new(spec, *grid, constraint);
    let zero = euler_flow(spec, grid)?;
    let starts = optimize::event_starts(&objective, &zero, opts.starts);
    objective.run(starts, opts)
}

/// What the backward rate is asked about.
#[derive(Clone, Copy, Debug)]
pub enum BackwardTarget<'a> {
    /// `Ĩ(ξ̃) = inf { I(ξ) : u(s_k, ξ_k) = ξ̃_k for all k }`.
    Path(&'a ScalarPath),
    /// `Ĩ(Γ)` for an event on `Y`.
    Event(EventSpec),
}

pub fn backward_rate(
    spec: &ProblemSpec,
    target: BackwardTarget<'_>,
    u0: &ValueSurface,
    grid: &TimeGrid,
) -> Result<RateResult> {
    backward_rate_with(spec, target, u0, grid, &RateOptions::default())
}

pub fn backward_rate_with(
    spec: &ProblemSpec,
    target: BackwardTarget<'_>,
    u0: &ValueSurface,
    grid: &TimeGrid,
    opts: &RateOptions,
) -> Result<RateResult> {
    spec.check_grid(grid)?;
    if u0.eps() != 0.0 {
        return Err(Error::invalid(format!(
            "backward rate needs the noiseless surface, got ε = {}",
            u0.eps()
        )));
    }
    if u0.mesh().dim() != spec.dim() {
        return Err(Error::invalid("surface and problem dimensions differ"));
    }
    spec.check_grid(u0.mesh().time())?;
    let zero = euler_flow(spec, grid)?;
    match target {
        BackwardTarget::Path(p) => {
            if !p.grid().same_as(grid) {
                return Err(Error::IncompatibleGrid(format!(
                    "target path has {} steps on [{}, {}], rate grid has {} on [{}, {}]",
                    p.grid().steps(),
                    p.grid().t0(),
                    p.grid().t1(),
                    grid.steps(),
                    grid.t0(),
                    grid.t1()
                )));
            }
            let objective = Objective::new(
                spec,
                *grid,
                Constraint::Path {
                    target: p.values().to_vec(),
                    surface: u0,
                },
            );
            let starts = optimize::path_starts(&objective, &zero, opts.starts);
            objective.run(starts, opts)
        }
        BackwardTarget::Event(event) => {
            event.check()?;
            if event.target != Target::Y {
                return Err(Error::invalid("backward_rate events must target Y"));
            }
            let flow = solve_flow(spec, grid)?;
            let reference = optimize::clamped_g(u0, &flow)?;
            let objective = Objective::new(
                spec,
                *grid,
                Constraint::Event {
                    event,
                    reference,
                    surface: Some(u0),
                    coordinate: 0,
                },
            );
            let starts = optimize::event_starts(&objective, &zero, opts.starts);
            objective.run(starts, opts)
        }
    }
}

#[cfg(test)]
mod tests;
