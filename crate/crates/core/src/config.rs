//! Declarative experiment configs (TOML).
//!
//! ```toml
//! [problem]
//! dimension = 1
//! t0 = 0.0
//! T = 1.0
//! x0 = [1.0]
//! steps = 400
//! lipschitz_K = 1.0
//! master_seed = 42
//! drift = { family = "scalar-linear", params = [-1.0] }
//! terminal = { family = "hinge", params = [1.0, -1.0] }
//! ```
//!
//! Unknown keys are errors. Parse errors carry the line and column of the
//! offending key.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coefficient, CoefficientRegistry, Family, ProblemSpec, Role, INACTIVE_OBSTACLE};
use crate::pde::{Axis, Mesh, PdeOptions, Substeps};
use crate::rate::{EventSpec, RateOptions};
use crate::rbsde::RegressionBasis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    /// Children of a `composite-sum`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<CoefficientConfig>,
    /// Registry key of a `registered-custom` handle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CoefficientConfig {
    pub fn resolve(&self, role: Role, dim: usize, registry: &CoefficientRegistry) -> Result<Coefficient> {
        let cfg = |e: Error| match e {
            Error::InvalidInput(m) => Error::Config(format!("{}: {m}", role_key(role))),
            other => other,
        };
        match self.family {
            Family::CompositeSum => {
                if self.terms.is_empty() {
                    return Err(Error::Config(format!("{}: composite-sum needs terms", role_key(role))));
                }
                let terms = self
                    .terms
                    .iter()
                    .map(|t| t.resolve(role, dim, registry))
                    .collect::<Result<Vec<_>>>()?;
                Coefficient::sum(role, dim, terms).map_err(cfg)
            }
            Family::Custom => {
                let name = self.name.as_deref().ok_or_else(|| {
                    Error::Config(format!("{}: registered-custom needs a name", role_key(role)))
                })?;
                registry.resolve(name, role, dim)
            }
            family => Coefficient::new(role, dim, family, self.params.clone()).map_err(cfg),
        }
    }
}

fn role_key(role: Role) -> &'static str {
    match role {
        Role::Drift => "problem.drift",
        Role::Driver => "problem.driver",
        Role::Terminal => "problem.terminal",
        Role::Obstacle => "problem.obstacle",
    }
}

fn default_t0() -> f64 {
    0.0
}

fn default_t1() -> f64 {
    1.0
}

fn default_k() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(rename = "T", default = "default_t1")]
    pub t1: f64,
    pub x0: Vec<f64>,
    /// Time steps of the simulation grid.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<CoefficientConfig>,
    #[serde(rename = "lipschitz_K", default = "default_k")]
    pub lipschitz_k: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl ProblemConfig {
    /// Absent coefficients default to `b = 0`, `f = 0`, `g = 0` and an
    /// inactive obstacle.
    pub fn to_spec(&self, registry: &CoefficientRegistry) -> Result<ProblemSpec> {
        let n = self.dimension;
        if n == 0 {
            return Err(Error::Config("problem.dimension must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("problem.steps must be positive".into()));
        }
        let slot = |c: &Option<CoefficientConfig>, role: Role, default: Coefficient| match c {
            Some(c) => c.resolve(role, n, registry),
            None => Ok(default),
        };
        ProblemSpec::builder(n)
            .horizon(self.t0, self.t1)
            .start(self.x0.clone())
            .lipschitz(self.lipschitz_k)
            .drift(slot(&self.drift, Role::Drift, Coefficient::zero(Role::Drift, n))?)
            .driver(slot(&self.driver, Role::Driver, Coefficient::zero(Role::Driver, n))?)
            .terminal(slot(&self.terminal, Role::Terminal, Coefficient::zero(Role::Terminal, n))?)
            .obstacle(slot(
                &self.obstacle,
                Role::Obstacle,
                Coefficient::constant(Role::Obstacle, n, &[INACTIVE_OBSTACLE]),
            )?)
            .build()
            .map_err(|e| match e {
                Error::InvalidInput(m) => Error::Config(format!("problem: {m}")),
                other => other,
            })
    }
}

fn default_space_steps() -> usize {
    400
}

fn default_margin_factor() -> f64 {
    6.0
}

fn default_cfl_target() -> f64 {
    0.9
}

fn yes() -> bool {
    true
}

/// Space-time mesh for the obstacle problem. The box is either explicit
/// (`lo`, `hi`) or the flow's range padded by `margin_factor·√(ε_max·(T − t))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Defaults to `problem.steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_steps: Option<usize>,
    #[serde(default = "default_space_steps")]
    pub space_steps: usize,
    #[serde(default = "default_margin_factor")]
    pub margin_factor: f64,
    /// Noise level the padding is sized for; defaults to the command's
    /// largest ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    /// Fixed explicit substeps per level; automatic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default = "default_cfl_target")]
    pub cfl_target: f64,
    #[serde(default = "yes")]
    pub check_box: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            time_steps: None,
            space_steps: default_space_steps(),
            margin_factor: default_margin_factor(),
            eps_max: None,
            lo: None,
            hi: None,
            substeps: None,
            cfl_target: default_cfl_target(),
            check_box: true,
        }
    }
}

impl MeshConfig {
    pub fn build(&self, spec: &ProblemSpec, problem_steps: usize, eps_max: f64) -> Result<Mesh> {
        let time_steps = self.time_steps.unwrap_or(problem_steps);
        match (&self.lo, &self.hi) {
            (Some(lo), Some(hi)) => {
                if lo.len() != spec.dim() || hi.len() != spec.dim() {
                    return Err(Error::Config("mesh.lo and mesh.hi need one entry per dimension".into()));
                }
                let axes = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| Axis::new(*a, *b, self.space_steps))
                    .collect::<Result<Vec<_>>>()?;
                Mesh::new(spec.grid(time_steps)?, axes)
            }
            (None, None) => {
                let eps = self.eps_max.unwrap_or(eps_max).max(1e-4);
                let margin = Mesh::noise_margin(spec, eps, self.margin_factor);
                Mesh::around_flow(spec, time_steps, self.space_steps, margin)
            }
            _ => Err(Error::Config("mesh.lo and mesh.hi must be given together".into())),
        }
    }

    pub fn options(&self) -> PdeOptions {
        PdeOptions {
            substeps: match self.substeps {
                Some(n) => Substeps::Fixed(n),
                None => Substeps::Auto {
                    target: self.cfl_target,
                },
            },
            check_box: self.check_box,
        }
    }
}

fn default_validate_samples() -> usize {
    2000
}

fn default_box_lo() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_box_lo")]
    pub box_lo: f64,
    #[serde(default = "default_t1")]
    pub box_hi: f64,
    #[serde(default = "default_validate_samples")]
    pub samples: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            box_lo: default_box_lo(),
            box_hi: default_t1(),
            samples: default_validate_samples(),
        }
    }
}

fn default_paths() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub eps: Vec<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub eps: f64,
}

fn default_rbsde_paths() -> usize {
    10_000
}

fn default_degree() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbsdeConfig {
    pub eps: f64,
    #[serde(default = "default_rbsde_paths")]
    pub paths: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "yes")]
    pub obstacle_basis: bool,
}

impl RbsdeConfig {
    pub fn basis(&self) -> RegressionBasis {
        RegressionBasis {
            degree: self.degree,
            include_obstacle: self.obstacle_basis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub event: EventSpec,
    /// Grid for the optimization; defaults to `problem.steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl RateConfig {
    pub fn options(&self) -> RateOptions {
        let mut o = RateOptions::default();
        if let Some(s) = self.starts {
            o.starts = s;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        o
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YMethod {
    #[default]
    Surfaces,
    Lsmc,
}

fn default_ldp_paths() -> usize {
    100_000
}

fn default_rate_steps() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub eps: Vec<f64>,
    #[serde(default = "default_ldp_paths")]
    pub paths: usize,
    pub event: EventSpec,
    #[serde(default)]
    pub realization: YMethod,
    #[serde(default = "default_rate_steps")]
    pub rate_steps: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "yes")]
    pub obstacle_basis: bool,
}

fn default_forward_band() -> [f64; 2] {
    [0.85, 1.15]
}

fn default_backward_band() -> [f64; 2] {
    [0.35, 1.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub eps: Vec<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub refine: bool,
    /// Accepted slope range of the forward column.
    #[serde(default = "default_forward_band")]
    pub forward_band: [f64; 2],
    /// Accepted slope range of the backward columns.
    #[serde(default = "default_backward_band")]
    pub backward_band: [f64; 2],
}

fn default_out() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

/// A whole experiment file: the problem plus optional command sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbsde: Option<RbsdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp: Option<LdpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One `section.key=value` override; `value` is read as a TOML value, and
/// as a bare string when that fails.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl std::str::FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form section.key=value")))?;
        let path: Vec<String> = key.trim().split('.').map(|p| p.trim().to_string()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("override '{s}' has an empty key segment")));
        }
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Self { path, value })
    }
}

fn apply(doc: &mut toml::Table, o: &Override) -> Result<()> {
    let (last, parents) = o.path.split_last().expect("nonempty path");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {}: '{p}' is not a section", o.path.join("."))))?;
    }
    table.insert(last.clone(), o.value.clone());
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    /// Parses `text`, then applies the overrides in order.
    pub fn parse_with(text: &str, overrides: &[Override]) -> Result<Self> {
        let base = Self::parse(text)?;
        if overrides.is_empty() {
            return Ok(base);
        }
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        for o in overrides {
            apply(&mut doc, o)?;
        }
        let keys: Vec<String> = overrides.iter().map(|o| o.path.join(".")).collect();
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides {}: {}", keys.join(", "), e.message())))
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn spec(&self, registry: &CoefficientRegistry) -> Result<ProblemSpec> {
        self.problem.to_spec(registry)
    }

    pub fn master_seed(&self) -> u64 {
        self.problem.master_seed
    }
}
