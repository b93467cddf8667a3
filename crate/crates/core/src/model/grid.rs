use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 = s_0 < s_1 < ... < s_N = t1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t0 >= t1 {
            return Err(Error::invalid(format!("time grid needs t0 < t1, got [{t0}, {t1}]")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Node `k`; the last node is `t1` exactly.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Same span, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            steps: self.steps * factor.max(1),
            ..*self
        }
    }

    /// Interval index `k` and weight `w` with `s = (1-w)·s_k + w·s_{k+1}`.
    /// Nodes map to `(k, 0.0)` except the last, which maps to `(N-1, 1.0)`.
    pub fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let tol = 1e-12 * self.span().max(1.0);
        if !(s >= self.t0 - tol && s <= self.t1 + tol) {
            return Err(Error::OutOfSpan {
                what: format!("time {s}"),
                lo: self.t0,
                hi: self.t1,
            });
        }
        let pos = ((s - self.t0) / self.step()).clamp(0.0, self.steps as f64);
        let mut k = pos.floor() as usize;
        if k + 1 < self.steps && s == self.node(k + 1) {
            k += 1;
        }
        if k >= self.steps {
            k = self.steps - 1;
        }
        let w = if s == self.node(k) {
            0.0
        } else if s == self.t1 {
            1.0
        } else {
            ((s - self.node(k)) / self.step()).clamp(0.0, 1.0)
        };
        Ok((k, w))
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps
            && (self.t0 - other.t0).abs() <= 1e-12 * self.span().max(1.0)
            && (self.t1 - other.t1).abs() <= 1e-12 * self.span().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_node_is_exact() {
        let g = TimeGrid::new(0.1, 0.7, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        assert_eq!(g.len(), 4);
        let nodes: Vec<f64> = g.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn locate_nodes_and_midpoints() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.locate(0.5).unwrap(), (2, 0.0));
        assert_eq!(g.locate(1.0).unwrap(), (3, 1.0));
        let (k, w) = g.locate(0.375).unwrap();
        assert_eq!(k, 1);
        assert!((w - 0.5).abs() < 1e-12);
        assert!(matches!(g.locate(1.5), Err(Error::OutOfSpan { .. })));
    }
}
