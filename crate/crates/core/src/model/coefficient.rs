//! Parametric coefficient handles for `b`, `f`, `g` and `h`.
//!
//! Every handle evaluates a flat argument vector whose layout depends on the
//! role:
//!
//! | role     | arguments            | output |
//! |----------|----------------------|--------|
//! | drift    | `(t, x₁..xₙ)`        | ℝⁿ     |
//! | driver   | `(t, x, y, z₁..zₙ)`  | ℝ      |
//! | terminal | `(x₁..xₙ)`           | ℝ      |
//! | obstacle | `(t, x₁..xₙ)`        | ℝ      |
//!
//! Families (with `m` the argument count and `d` the output count):
//!
//! * `constant`: `params = c[d]`.
//! * `affine`: `params = c[d] ++ W[d×m]` (row-major), output `c + W·a`.
//! * `scalar-linear`: `params = [k]` or `[k, c]`, output `k·s + c` where `s`
//!   is the natural state: `x` for the drift, `x₁` for terminal and
//!   obstacle, `y` for the driver.
//! * `sinusoidal`: `params = [amp, freq, phase]`, output
//!   `amp·sin(freq·τ + phase)` in every component, `τ = t` (or `x₁` for the
//!   terminal, which has no time argument).
//! * `hinge` (scalar roles): `params = [c, w[m]]`, output `max(c + w·a, 0)`.
//! * `quadratic` (scalar roles): `params = [c, w[m]]`, output `c + Σ wⱼ aⱼ²`.
//! * `composite-sum`: sum of child handles of the same role.
//! * `registered-custom`: a closure looked up by name in a
//!   [`CoefficientRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type CustomFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub(crate) type Buf = SmallVec<[f64; 12]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Constant,
    Affine,
    ScalarLinear,
    Sinusoidal,
    Hinge,
    Quadratic,
    CompositeSum,
    #[serde(rename = "registered-custom")]
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Drift,
    Driver,
    Terminal,
    Obstacle,
}

impl Role {
    pub fn arg_len(self, dim: usize) -> usize {
        match self {
            Role::Drift | Role::Obstacle => 1 + dim,
            Role::Driver => 2 + 2 * dim,
            Role::Terminal => dim,
        }
    }

    pub fn out_len(self, dim: usize) -> usize {
        match self {
            Role::Drift => dim,
            _ => 1,
        }
    }
}

#[derive(Clone)]
struct Custom {
    name: String,
    f: CustomFn,
}

/// A coefficient handle: family tag, parameters, and (for sums) children.
#[derive(Clone)]
pub struct Coefficient {
    role: Role,
    dim: usize,
    family: Family,
    params: Vec<f64>,
    terms: Vec<Coefficient>,
    custom: Option<Custom>,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Coefficient");
        s.field("role", &self.role).field("family", &self.family);
        match self.family {
            Family::CompositeSum => s.field("terms", &self.terms),
            Family::Custom => s.field("name", &self.custom.as_ref().map(|c| c.name.as_str())),
            _ => s.field("params", &self.params),
        };
        s.finish()
    }
}

impl Coefficient {
    pub fn new(role: Role, dim: usize, family: Family, params: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("coefficient dimension must be positive"));
        }
        let m = role.arg_len(dim);
        let d = role.out_len(dim);
        let expected: &[usize] = match family {
            Family::Constant => &[d],
            Family::Affine => &[d * (1 + m)],
            Family::ScalarLinear => &[1, 2],
            Family::Sinusoidal => &[3],
            Family::Hinge | Family::Quadratic => {
                if role == Role::Drift {
                    return Err(Error::invalid(format!("family {family:?} is scalar-valued and cannot be a drift")));
                }
                &[1 + m]
            }
            Family::CompositeSum | Family::Custom => {
                return Err(Error::invalid(format!(
                    "family {family:?} is built with Coefficient::sum / Coefficient::custom"
                )));
            }
        };
        if !expected.contains(&params.len()) {
            return Err(Error::invalid(format!(
                "{role:?} coefficient of family {family:?} expects {expected:?} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("coefficient parameters must be finite"));
        }
        Ok(Self {
            role,
            dim,
            family,
            params,
            terms: Vec::new(),
            custom: None,
        })
    }

    pub fn zero(role: Role, dim: usize) -> Self {
        Self::constant(role, dim, &vec![0.0; role.out_len(dim)])
    }

    /// Panics if `c` has the wrong length.
    pub fn constant(role: Role, dim: usize, c: &[f64]) -> Self {
        Self::new(role, dim, Family::Constant, c.to_vec()).expect("constant coefficient")
    }

    pub fn scalar_linear(role: Role, dim: usize, k: f64, c: f64) -> Self {
        Self::new(role, dim, Family::ScalarLinear, vec![k, c]).expect("scalar-linear coefficient")
    }

    pub fn sinusoidal(role: Role, dim: usize, amp: f64, freq: f64, phase: f64) -> Self {
        Self::new(role, dim, Family::Sinusoidal, vec![amp, freq, phase]).expect("sinusoidal coefficient")
    }

    /// `max(c + w·a, 0)`; `w` has one weight per argument of the role.
    pub fn hinge(role: Role, dim: usize, c: f64, w: &[f64]) -> Result<Self> {
        let mut p = vec![c];
        p.extend_from_slice(w);
        Self::new(role, dim, Family::Hinge, p)
    }

    pub fn quadratic(role: Role, dim: usize, c: f64, w: &[f64]) -> Result<Self> {
        let mut p = vec![c];
        p.extend_from_slice(w);
        Self::new(role, dim, Family::Quadratic, p)
    }

    /// `c + W·a` with `W` row-major `out_len × arg_len`.
    pub fn affine(role: Role, dim: usize, c: &[f64], w: &[f64]) -> Result<Self> {
        let mut p = c.to_vec();
        p.extend_from_slice(w);
        Self::new(role, dim, Family::Affine, p)
    }

    pub fn sum(role: Role, dim: usize, terms: Vec<Coefficient>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("composite-sum needs at least one term"));
        }
        if let Some(t) = terms.iter().find(|t| t.role != role || t.dim != dim) {
            return Err(Error::invalid(format!(
                "composite-sum term has role {:?}/dim {}, expected {role:?}/{dim}",
                t.role, t.dim
            )));
        }
        Ok(Self {
            role,
            dim,
            family: Family::CompositeSum,
            params: Vec::new(),
            terms,
            custom: None,
        })
    }

    pub fn custom(role: Role, dim: usize, name: impl Into<String>, f: CustomFn) -> Self {
        Self {
            role,
            dim,
            family: Family::Custom,
            params: Vec::new(),
            terms: Vec::new(),
            custom: Some(Custom { name: name.into(), f }),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn terms(&self) -> &[Coefficient] {
        &self.terms
    }

    pub fn custom_name(&self) -> Option<&str> {
        self.custom.as_ref().map(|c| c.name.as_str())
    }

    /// Evaluates on the role's flat argument layout.
    pub fn eval(&self, args: &[f64], out: &mut [f64]) {
        debug_assert_eq!(args.len(), self.role.arg_len(self.dim));
        debug_assert_eq!(out.len(), self.role.out_len(self.dim));
        let p = &self.params;
        let d = out.len();
        match self.family {
            Family::Constant => out.copy_from_slice(&p[..d]),
            Family::Affine => {
                let m = args.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &p[d + i * m..d + (i + 1) * m];
                    *o = p[i] + row.iter().zip(args).map(|(w, a)| w * a).sum::<f64>();
                }
            }
            Family::ScalarLinear => {
                let k = p[0];
                let c = p.get(1).copied().unwrap_or(0.0);
                match self.role {
                    Role::Drift => {
                        for (o, x) in out.iter_mut().zip(&args[1..]) {
                            *o = k * x + c;
                        }
                    }
                    Role::Terminal => out[0] = k * args[0] + c,
                    Role::Obstacle => out[0] = k * args[1] + c,
                    Role::Driver => out[0] = k * args[1 + self.dim] + c,
                }
            }
            Family::Sinusoidal => {
                // τ is args[0] in every role: t, or x₁ for the terminal.
                let v = p[0] * (p[1] * args[0] + p[2]).sin();
                out.fill(v);
            }
            Family::Hinge => {
                let s = p[0] + p[1..].iter().zip(args).map(|(w, a)| w * a).sum::<f64>();
                out[0] = s.max(0.0);
            }
            Family::Quadratic => {
                out[0] = p[0] + p[1..].iter().zip(args).map(|(w, a)| w * a * a).sum::<f64>();
            }
            Family::CompositeSum => {
                out.fill(0.0);
                let mut tmp: Buf = SmallVec::from_elem(0.0, d);
                for t in &self.terms {
                    t.eval(args, &mut tmp);
                    for (o, v) in out.iter_mut().zip(tmp.iter()) {
                        *o += v;
                    }
                }
            }
            Family::Custom => {
                let c = self.custom.as_ref().expect("custom coefficient without closure");
                (c.f)(args, out)
            }
        }
    }

    pub fn eval_scalar(&self, args: &[f64]) -> f64 {
        let mut out = [0.0];
        self.eval(args, &mut out);
        out[0]
    }

    /// ∂b/∂x, row-major n×n. Drift role only.
    pub(crate) fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        debug_assert_eq!(out.len(), n * n);
        match self.family {
            Family::Constant | Family::Sinusoidal => out.fill(0.0),
            Family::Affine => {
                let m = 1 + n;
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = self.params[n + i * m + 1 + j];
                    }
                }
            }
            Family::ScalarLinear => {
                out.fill(0.0);
                for i in 0..n {
                    out[i * n + i] = self.params[0];
                }
            }
            Family::CompositeSum => {
                out.fill(0.0);
                let mut tmp = vec![0.0; n * n];
                for term in &self.terms {
                    term.drift_jacobian(t, x, &mut tmp);
                    for (o, v) in out.iter_mut().zip(&tmp) {
                        *o += v;
                    }
                }
            }
            Family::Custom | Family::Hinge | Family::Quadratic => {
                let mut args: Buf = SmallVec::with_capacity(1 + n);
                args.push(t);
                args.extend_from_slice(x);
                let mut hi = vec![0.0; n];
                let mut lo = vec![0.0; n];
                for j in 0..n {
                    let h = 1e-6 * x[j].abs().max(1.0);
                    let orig = args[1 + j];
                    args[1 + j] = orig + h;
                    self.eval(&args, &mut hi);
                    args[1 + j] = orig - h;
                    self.eval(&args, &mut lo);
                    args[1 + j] = orig;
                    for i in 0..n {
                        out[i * n + j] = (hi[i] - lo[i]) / (2.0 * h);
                    }
                }
            }
        }
    }
}

/// Named closures that configs can refer to with `family = "registered-custom"`.
#[derive(Clone, Default)]
pub struct CoefficientRegistry {
    entries: BTreeMap<String, (Role, CustomFn)>,
}

impl fmt::Debug for CoefficientRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl CoefficientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, role: Role, f: CustomFn) -> &mut Self {
        self.entries.insert(name.into(), (role, f));
        self
    }

    pub fn resolve(&self, name: &str, role: Role, dim: usize) -> Result<Coefficient> {
        match self.entries.get(name) {
            Some((r, f)) if *r == role => Ok(Coefficient::custom(role, dim, name, f.clone())),
            Some((r, _)) => Err(Error::Config(format!(
                "custom coefficient '{name}' is registered as {r:?}, used as {role:?}"
            ))),
            None => Err(Error::Config(format!("no custom coefficient registered as '{name}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_drift_and_jacobian() {
        // b(t, x) = (1 + 2t + 3x₁ - x₂, -x₁)
        let b = Coefficient::affine(Role::Drift, 2, &[1.0, 0.0], &[2.0, 3.0, -1.0, 0.0, -1.0, 0.0]).unwrap();
        let mut out = [0.0; 2];
        b.eval(&[0.5, 1.0, 2.0], &mut out);
        assert_eq!(out, [1.0 + 1.0 + 3.0 - 2.0, -1.0]);
        let mut jac = [0.0; 4];
        b.drift_jacobian(0.5, &[1.0, 2.0], &mut jac);
        assert_eq!(jac, [3.0, -1.0, -1.0, 0.0]);
    }

    #[test]
    fn scalar_linear_picks_natural_state() {
        let f = Coefficient::scalar_linear(Role::Driver, 1, 2.0, 0.5);
        assert_eq!(f.eval_scalar(&[0.0, 10.0, 3.0, 7.0]), 6.5);
        let g = Coefficient::scalar_linear(Role::Terminal, 1, -1.0, 1.0);
        assert_eq!(g.eval_scalar(&[0.25]), 0.75);
        let h = Coefficient::scalar_linear(Role::Obstacle, 1, 1.0, 0.0);
        assert_eq!(h.eval_scalar(&[9.0, 0.25]), 0.25);
    }

    #[test]
    fn hinge_is_put_payoff() {
        let g = Coefficient::hinge(Role::Terminal, 1, 1.0, &[-1.0]).unwrap();
        assert_eq!(g.eval_scalar(&[0.25]), 0.75);
        assert_eq!(g.eval_scalar(&[1.5]), 0.0);
        assert!(Coefficient::hinge(Role::Drift, 1, 1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn composite_sum_adds_terms() {
        let terms = vec![
            Coefficient::scalar_linear(Role::Obstacle, 1, 0.8, 0.0),
            Coefficient::sinusoidal(Role::Obstacle, 1, 0.2, 3.0, 0.0),
        ];
        let h = Coefficient::sum(Role::Obstacle, 1, terms).unwrap();
        let v = h.eval_scalar(&[0.5, 1.0]);
        assert!((v - (0.8 + 0.2 * 1.5f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn wrong_param_count_rejected() {
        assert!(Coefficient::new(Role::Drift, 2, Family::Constant, vec![1.0]).is_err());
        assert!(Coefficient::new(Role::Terminal, 1, Family::Sinusoidal, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn registry_checks_role() {
        let mut reg = CoefficientRegistry::new();
        reg.register("square", Role::Obstacle, Arc::new(|a: &[f64], o: &mut [f64]| o[0] = a[1] * a[1]));
        let h = reg.resolve("square", Role::Obstacle, 1).unwrap();
        assert_eq!(h.eval_scalar(&[0.0, 3.0]), 9.0);
        assert!(reg.resolve("square", Role::Terminal, 1).is_err());
        assert!(reg.resolve("cube", Role::Obstacle, 1).is_err());
    }

    #[test]
    fn custom_jacobian_by_differences() {
        let b = Coefficient::custom(
            Role::Drift,
            1,
            "cubic",
            Arc::new(|a: &[f64], o: &mut [f64]| o[0] = a[1].powi(3)),
        );
        let mut jac = [0.0];
        b.drift_jacobian(0.0, &[2.0], &mut jac);
        assert!((jac[0] - 12.0).abs() < 1e-6);
    }
}
