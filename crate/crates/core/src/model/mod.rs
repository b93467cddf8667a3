//! Problem data shared by every solver: coefficients, grids, paths and noise.

mod coefficient;
mod grid;
mod noise;
mod path;
mod validate;

pub use coefficient::{Coefficient, CoefficientRegistry, CustomFn, Family, Role};
pub use grid::TimeGrid;
pub use noise::{make_noise, NoiseStream};
pub use path::{ScalarPath, SpacePath};
pub use validate::{validate_spec, AssumptionCheck, SpaceBox, ValidationReport};

pub(crate) use coefficient::Buf;
pub(crate) use path::{euclid_dist, euclid_norm};

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Constant obstacle level used when the reflection should never act.
pub const INACTIVE_OBSTACLE: f64 = -1.0e6;

/// The coefficient quadruple `(b, f, g, h)` with horizon, start point and
/// the Lipschitz/growth constant `K`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    dim: usize,
    t0: f64,
    t1: f64,
    x0: Vec<f64>,
    drift: Coefficient,
    driver: Coefficient,
    terminal: Coefficient,
    obstacle: Coefficient,
    lipschitz: f64,
}

impl ProblemSpec {
    pub fn builder(dim: usize) -> ProblemSpecBuilder {
        ProblemSpecBuilder::new(dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Terminal time `T`.
    pub fn horizon(&self) -> f64 {
        self.t1
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn drift_handle(&self) -> &Coefficient {
        &self.drift
    }

    pub fn driver_handle(&self) -> &Coefficient {
        &self.driver
    }

    pub fn terminal_handle(&self) -> &Coefficient {
        &self.terminal
    }

    pub fn obstacle_handle(&self) -> &Coefficient {
        &self.obstacle
    }

    /// Uniform grid on `[t, T]`.
    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.t1, steps)
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let tol = 1e-12 * (self.t1 - self.t0).abs().max(1.0);
        if (grid.t0() - self.t0).abs() > tol || (grid.t1() - self.t1).abs() > tol {
            return Err(Error::IncompatibleGrid(format!(
                "grid spans [{}, {}], problem horizon is [{}, {}]",
                grid.t0(),
                grid.t1(),
                self.t0,
                self.t1
            )));
        }
        Ok(())
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut args: Buf = SmallVec::with_capacity(1 + self.dim);
        args.push(t);
        args.extend_from_slice(x);
        self.drift.eval(&args, out);
    }

    pub fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.drift.drift_jacobian(t, x, out);
    }

    pub fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        let mut args: Buf = SmallVec::with_capacity(2 + 2 * self.dim);
        args.push(t);
        args.extend_from_slice(x);
        args.push(y);
        args.extend_from_slice(z);
        self.driver.eval_scalar(&args)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        self.terminal.eval_scalar(x)
    }

    pub fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        let mut args: Buf = SmallVec::with_capacity(1 + self.dim);
        args.push(t);
        args.extend_from_slice(x);
        self.obstacle.eval_scalar(&args)
    }

    /// True when the driver is the zero constant, so solvers can skip it.
    pub(crate) fn driver_is_zero(&self) -> bool {
        self.driver.family() == Family::Constant && self.driver.params().iter().all(|p| *p == 0.0)
    }

    pub fn to_builder(&self) -> ProblemSpecBuilder {
        ProblemSpecBuilder {
            dim: self.dim,
            t0: self.t0,
            t1: self.t1,
            x0: self.x0.clone(),
            drift: self.drift.clone(),
            driver: self.driver.clone(),
            terminal: self.terminal.clone(),
            obstacle: self.obstacle.clone(),
            lipschitz: self.lipschitz,
        }
    }
}

/// Defaults: horizon `[0, 1]`, start at the origin, `b = 0`, `f = 0`,
/// `g = 0`, inactive obstacle, `K = 1`.
#[derive(Clone, Debug)]
pub struct ProblemSpecBuilder {
    dim: usize,
    t0: f64,
    t1: f64,
    x0: Vec<f64>,
    drift: Coefficient,
    driver: Coefficient,
    terminal: Coefficient,
    obstacle: Coefficient,
    lipschitz: f64,
}

impl ProblemSpecBuilder {
    fn new(dim: usize) -> Self {
        let d = dim.max(1);
        Self {
            dim,
            t0: 0.0,
            t1: 1.0,
            x0: vec![0.0; d],
            drift: Coefficient::zero(Role::Drift, d),
            driver: Coefficient::zero(Role::Driver, d),
            terminal: Coefficient::zero(Role::Terminal, d),
            obstacle: Coefficient::constant(Role::Obstacle, d, &[INACTIVE_OBSTACLE]),
            lipschitz: 1.0,
        }
    }

    pub fn horizon(mut self, t0: f64, t1: f64) -> Self {
        self.t0 = t0;
        self.t1 = t1;
        self
    }

    pub fn start(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn drift(mut self, c: Coefficient) -> Self {
        self.drift = c;
        self
    }

    pub fn driver(mut self, c: Coefficient) -> Self {
        self.driver = c;
        self
    }

    pub fn terminal(mut self, c: Coefficient) -> Self {
        self.terminal = c;
        self
    }

    pub fn obstacle(mut self, c: Coefficient) -> Self {
        self.obstacle = c;
        self
    }

    pub fn lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = k;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(self.t0.is_finite() && self.t1.is_finite()) || self.t0 >= self.t1 {
            return Err(Error::invalid(format!("horizon needs t < T, got [{}, {}]", self.t0, self.t1)));
        }
        if self.x0.len() != self.dim || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "start point must be a finite vector of length {}",
                self.dim
            )));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(Error::invalid("lipschitz_K must be positive"));
        }
        for (c, role) in [
            (&self.drift, Role::Drift),
            (&self.driver, Role::Driver),
            (&self.terminal, Role::Terminal),
            (&self.obstacle, Role::Obstacle),
        ] {
            if c.role() != role || c.dim() != self.dim {
                return Err(Error::invalid(format!(
                    "{role:?} slot holds a {:?} coefficient of dimension {}",
                    c.role(),
                    c.dim()
                )));
            }
        }
        Ok(ProblemSpec {
            dim: self.dim,
            t0: self.t0,
            t1: self.t1,
            x0: self.x0,
            drift: self.drift,
            driver: self.driver,
            terminal: self.terminal,
            obstacle: self.obstacle,
            lipschitz: self.lipschitz,
        })
    }
}
