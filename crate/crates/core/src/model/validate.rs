//! Sampled checks of the growth and Lipschitz hypotheses on `(b, f, g, h)`.
//!
//! Sampling is deterministic: the corners of the box at both ends of the
//! horizon, followed by a Halton sequence over `(t, x, y, z)`.

use serde::Serialize;

use super::{euclid_norm, ProblemSpec};
use crate::error::{Error, Result};

/// Relative slack allowed on `K` before a check fails.
const SLACK: f64 = 1.01;

/// Axis-aligned box in ℝⁿ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SpaceBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("box needs lo < hi in every coordinate"));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn radius(&self) -> f64 {
        self.lo.iter().chain(&self.hi).fold(1.0f64, |r, v| r.max(v.abs()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub statement: &'static str,
    /// Worst observed ratio (for the dominance check: the smallest `g − h(T,·)`).
    pub worst: f64,
    /// The bound the ratio is held to (`K`, or `0` for the dominance check).
    pub bound: f64,
    pub passed: bool,
    /// Informational checks are reported but never reject a problem.
    pub informational: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub lipschitz: f64,
    pub samples: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.informational)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed && !c.informational)
            .map(|c| format!("{} (worst {:.4} vs {:.4})", c.name, c.worst, c.bound))
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Samples the standing assumptions on `space` and returns the report, or
/// `RejectedSpec` carrying it when a ratio exceeds `K` by more than 1%.
pub fn validate_spec(spec: &ProblemSpec, space: &SpaceBox, samples: usize) -> Result<ValidationReport> {
    let report = build_report(spec, space, samples)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::RejectedSpec(Box::new(report)))
    }
}

struct Sample {
    t: f64,
    x: Vec<f64>,
    y: f64,
    z: Vec<f64>,
}

fn build_report(spec: &ProblemSpec, space: &SpaceBox, samples: usize) -> Result<ValidationReport> {
    let n = spec.dim();
    if space.dim() != n {
        return Err(Error::invalid(format!("box has dimension {}, problem has {n}", space.dim())));
    }
    if samples < 2 {
        return Err(Error::invalid("validation needs at least 2 samples"));
    }
    let pts = sample_points(spec, space, samples);
    let k = spec.lipschitz();
    let bound = SLACK * k;

    let mut drift_lip = 0.0f64;
    let mut drift_growth = 0.0f64;
    let mut driver_growth = 0.0f64;
    let mut driver_lip = 0.0f64;
    let mut obstacle_growth = f64::NEG_INFINITY;
    let mut obstacle_lip = 0.0f64;
    let mut terminal_lip = 0.0f64;
    let mut terminal_growth = 0.0f64;
    let mut dominance = f64::INFINITY;

    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    let zeros = vec![0.0; n];
    for (i, p) in pts.iter().enumerate() {
        let nx = euclid_norm(&p.x);
        let h_scale = 1e-6 * p.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));

        spec.drift(p.t, &p.x, &mut b0);
        drift_growth = drift_growth.max(euclid_norm(&b0) / (1.0 + nx));
        driver_growth = driver_growth.max(spec.driver(p.t, &p.x, 0.0, &zeros).abs() / (1.0 + nx * nx));
        let hval = spec.obstacle(p.t, &p.x);
        obstacle_growth = obstacle_growth.max(hval / (1.0 + nx));
        let gval = spec.terminal(&p.x);
        terminal_growth = terminal_growth.max(gval.abs() / (1.0 + nx));
        dominance = dominance.min(gval - spec.obstacle(spec.horizon(), &p.x));

        // local slopes along coordinate directions
        let mut xp = p.x.clone();
        let mut fx_grad = 0.0;
        let mut fz_grad = 0.0;
        let mut h_grad = 0.0;
        let mut g_grad = 0.0;
        for j in 0..n {
            let orig = xp[j];
            xp[j] = orig + h_scale;
            spec.drift(p.t, &xp, &mut b1);
            let fp = spec.driver(p.t, &xp, p.y, &p.z);
            let hp = spec.obstacle(p.t, &xp);
            let gp = spec.terminal(&xp);
            xp[j] = orig - h_scale;
            spec.drift(p.t, &xp, &mut b0);
            let fm = spec.driver(p.t, &xp, p.y, &p.z);
            let hm = spec.obstacle(p.t, &xp);
            let gm = spec.terminal(&xp);
            xp[j] = orig;
            let col: f64 = b1.iter().zip(&b0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            drift_lip = drift_lip.max(col / (2.0 * h_scale));
            fx_grad += ((fp - fm) / (2.0 * h_scale)).powi(2);
            h_grad += ((hp - hm) / (2.0 * h_scale)).powi(2);
            g_grad += ((gp - gm) / (2.0 * h_scale)).powi(2);

            let mut zp = p.z.clone();
            let zorig = zp[j];
            let hz = 1e-6 * zorig.abs().max(1.0);
            zp[j] = zorig + hz;
            let f_up = spec.driver(p.t, &p.x, p.y, &zp);
            zp[j] = zorig - hz;
            let f_dn = spec.driver(p.t, &p.x, p.y, &zp);
            fz_grad += ((f_up - f_dn) / (2.0 * hz)).powi(2);
        }
        let hy = 1e-6 * p.y.abs().max(1.0);
        let fy = (spec.driver(p.t, &p.x, p.y + hy, &p.z) - spec.driver(p.t, &p.x, p.y - hy, &p.z)).abs() / (2.0 * hy);
        driver_lip = driver_lip.max(fx_grad.sqrt()).max(fy).max(fz_grad.sqrt());
        obstacle_lip = obstacle_lip.max(h_grad.sqrt());
        terminal_lip = terminal_lip.max(g_grad.sqrt());

        // secant slopes against the next sample, at a common time
        let q = &pts[(i + 1) % pts.len()];
        let dx = super::euclid_dist(&p.x, &q.x);
        if dx > 0.0 {
            spec.drift(p.t, &p.x, &mut b0);
            spec.drift(p.t, &q.x, &mut b1);
            drift_lip = drift_lip.max(super::euclid_dist(&b0, &b1) / dx);
            obstacle_lip = obstacle_lip.max((spec.obstacle(p.t, &p.x) - spec.obstacle(p.t, &q.x)).abs() / dx);
            terminal_lip = terminal_lip.max((spec.terminal(&p.x) - spec.terminal(&q.x)).abs() / dx);
        }
        let dist = dx + (p.y - q.y).abs() + super::euclid_dist(&p.z, &q.z);
        if dist > 0.0 {
            let df = spec.driver(p.t, &p.x, p.y, &p.z) - spec.driver(p.t, &q.x, q.y, &q.z);
            driver_lip = driver_lip.max(df.abs() / dist);
        }
    }

    let dominance_tol = 1e-12;
    let checks = vec![
        check("drift-lipschitz", "|b(t,x) - b(t,x')| <= K|x - x'|", drift_lip, k, drift_lip <= bound, false),
        check("drift-growth", "|b(t,x)| / (1+|x|), linear growth", drift_growth, k, drift_growth <= bound, true),
        check("driver-growth", "|f(t,x,0,0)| <= K(1+|x|^2)", driver_growth, k, driver_growth <= bound, false),
        check(
            "driver-lipschitz",
            "|f(t,x,y,z) - f(t,x',y',z')| <= K(|x-x'| + |y-y'| + |z-z'|)",
            driver_lip,
            k,
            driver_lip <= bound,
            false,
        ),
        check("obstacle-growth", "h(t,x) <= K(1+|x|)", obstacle_growth, k, obstacle_growth <= bound, false),
        check("obstacle-lipschitz", "|h(t,x) - h(t,x')| <= K|x - x'|", obstacle_lip, k, obstacle_lip <= bound, false),
        check("terminal-lipschitz", "|g(x) - g(x')| <= K|x - x'|", terminal_lip, k, terminal_lip <= bound, false),
        check("terminal-growth", "|g(x)| / (1+|x|), polynomial growth", terminal_growth, k, true, true),
        check(
            "terminal-dominates-obstacle",
            "g(x) >= h(T,x)",
            dominance,
            0.0,
            dominance >= -dominance_tol,
            false,
        ),
    ];
    Ok(ValidationReport {
        lipschitz: k,
        samples: pts.len(),
        checks,
    })
}

fn check(
    name: &'static str,
    statement: &'static str,
    worst: f64,
    bound: f64,
    passed: bool,
    informational: bool,
) -> AssumptionCheck {
    AssumptionCheck {
        name,
        statement,
        worst,
        bound,
        passed,
        informational,
    }
}

fn sample_points(spec: &ProblemSpec, space: &SpaceBox, samples: usize) -> Vec<Sample> {
    let n = spec.dim();
    let r = space.radius();
    let (t0, t1) = (spec.t0(), spec.horizon());
    let mut pts = Vec::with_capacity(samples + (2usize << n.min(10)));

    // box corners at both ends of the horizon
    for &t in &[t0, t1] {
        for mask in 0..(1usize << n.min(10)) {
            let x = (0..n)
                .map(|j| if j < 10 && mask >> j & 1 == 1 { space.hi[j] } else { space.lo[j] })
                .collect();
            pts.push(Sample {
                t,
                x,
                y: 0.0,
                z: vec![0.0; n],
            });
        }
    }

    let dims = 2 + 2 * n;
    let primes = first_primes(dims);
    for i in 1..=samples {
        let u: Vec<f64> = primes.iter().map(|&p| radical_inverse(i as u64, p)).collect();
        let t = t0 + u[0] * (t1 - t0);
        let x = (0..n).map(|j| space.lo[j] + u[1 + j] * (space.hi[j] - space.lo[j])).collect();
        let y = -r + 2.0 * r * u[1 + n];
        let z = (0..n).map(|j| -r + 2.0 * r * u[2 + n + j]).collect();
        pts.push(Sample { t, x, y, z });
    }
    pts
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut c = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficient, Role};

    fn linear_spec(k: f64) -> ProblemSpec {
        ProblemSpec::builder(1)
            .terminal(Coefficient::scalar_linear(Role::Terminal, 1, 1.0, 0.0))
            .lipschitz(k)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_identity_coefficients_pass() {
        let report = validate_spec(&linear_spec(1.0), &SpaceBox::cube(1, -1.0, 1.0).unwrap(), 64).unwrap();
        assert!(report.passed());
        assert!(report.check("terminal-lipschitz").unwrap().worst <= 1.0 + 1e-6);
    }

    #[test]
    fn driver_lipschitz_in_y_violation() {
        let spec = ProblemSpec::builder(1)
            .driver(Coefficient::scalar_linear(Role::Driver, 1, 2.0, 0.0))
            .build()
            .unwrap();
        match validate_spec(&spec, &SpaceBox::cube(1, -1.0, 1.0).unwrap(), 64) {
            Err(Error::RejectedSpec(r)) => {
                let c = r.check("driver-lipschitz").unwrap();
                assert!(!c.passed);
                assert!((c.worst - 2.0).abs() < 1e-6);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_obstacle_growth_violation() {
        // max x²/(1+|x|) on [-2, 2] is 4/3 at the corners
        let h = Coefficient::quadratic(Role::Obstacle, 1, 0.0, &[0.0, 1.0]).unwrap();
        let spec = ProblemSpec::builder(1)
            .obstacle(h)
            .terminal(Coefficient::quadratic(Role::Terminal, 1, 0.0, &[1.0]).unwrap())
            .build()
            .unwrap();
        match validate_spec(&spec, &SpaceBox::cube(1, -2.0, 2.0).unwrap(), 64) {
            Err(Error::RejectedSpec(r)) => {
                let c = r.check("obstacle-growth").unwrap();
                assert!((c.worst - 4.0 / 3.0).abs() < 1e-9, "worst = {}", c.worst);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn terminal_below_obstacle_rejected() {
        let spec = ProblemSpec::builder(1)
            .obstacle(Coefficient::constant(Role::Obstacle, 1, &[0.5]))
            .build()
            .unwrap();
        let err = validate_spec(&spec, &SpaceBox::cube(1, -1.0, 1.0).unwrap(), 16).unwrap_err();
        assert_eq!(err.code(), "REJECTED_SPEC");
    }

    #[test]
    fn two_dimensional_rotation_drift_passes() {
        // b(x) = (-x₂, x₁) is 1-Lipschitz; its Frobenius norm is √2
        let b = Coefficient::affine(Role::Drift, 2, &[0.0, 0.0], &[0.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap();
        let spec = ProblemSpec::builder(2).drift(b).build().unwrap();
        let report = validate_spec(&spec, &SpaceBox::cube(2, -1.0, 1.0).unwrap(), 128).unwrap();
        assert!(report.check("drift-lipschitz").unwrap().worst <= 1.0 + 1e-6);
    }

    #[test]
    fn rejects_tiny_sample_count() {
        assert!(validate_spec(&linear_spec(1.0), &SpaceBox::cube(1, -1.0, 1.0).unwrap(), 1).is_err());
    }
}
