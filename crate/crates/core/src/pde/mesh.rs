use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::solve_flow;
use crate::model::{ProblemSpec, TimeGrid};

/// Uniform axis `lo = x_0 < ... < x_N = hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    lo: f64,
    hi: f64,
    steps: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::invalid(format!("axis needs lo < hi, got [{lo}, {hi}]")));
        }
        if steps < 3 {
            return Err(Error::invalid("axis needs at least 3 steps"));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    /// Cell index and weight, with the same conventions as [`TimeGrid::locate`].
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let tol = 1e-12 * (self.hi - self.lo).max(1.0);
        if !(x >= self.lo - tol && x <= self.hi + tol) {
            return None;
        }
        let pos = ((x - self.lo) / self.step()).clamp(0.0, self.steps as f64);
        let mut i = pos.floor() as usize;
        if i >= self.steps {
            i = self.steps - 1;
        }
        let w = if x == self.node(i) {
            0.0
        } else if x == self.hi {
            1.0
        } else {
            ((x - self.node(i)) / self.step()).clamp(0.0, 1.0)
        };
        Some((i, w))
    }

    pub(crate) fn refined(&self, factor: usize) -> Self {
        Self {
            steps: self.steps * factor,
            ..*self
        }
    }
}

/// Time grid times a tensor space mesh in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    time: TimeGrid,
    axes: Vec<Axis>,
}

impl Mesh {
    pub fn new(time: TimeGrid, axes: Vec<Axis>) -> Result<Self> {
        if !(1..=2).contains(&axes.len()) {
            return Err(Error::invalid(format!(
                "obstacle meshes support dimension 1 or 2, got {}",
                axes.len()
            )));
        }
        Ok(Self { time, axes })
    }

    /// Box around the flow from `x` padded by `margin` on every side.
    pub fn around_flow(spec: &ProblemSpec, time_steps: usize, space_steps: usize, margin: f64) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::invalid("mesh margin must be positive"));
        }
        let time = spec.grid(time_steps)?;
        let flow = solve_flow(spec, &time.refined(4.max(400 / time_steps.max(1))))?;
        let axes = (0..spec.dim())
            .map(|i| {
                let c = flow.coordinate(i);
                let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Axis::new(lo - margin, hi + margin, space_steps)
            })
            .collect::<Result<_>>()?;
        Self::new(time, axes)
    }

    /// `factor · √(ε·(T − t))`, the padding the box needs to hold the noise.
    pub fn noise_margin(spec: &ProblemSpec, eps_max: f64, factor: f64) -> f64 {
        factor * (eps_max * (spec.horizon() - spec.t0())).sqrt()
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Number of space nodes per time level.
    pub fn space_len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn node_count(&self) -> usize {
        self.space_len() * self.time.len()
    }

    /// Flat space index, axis 0 major.
    pub fn space_index(&self, idx: &[usize]) -> usize {
        match idx {
            [i] => *i,
            [i, j] => i * self.axes[1].len() + j,
            _ => unreachable!("mesh dimension is 1 or 2"),
        }
    }

    pub fn space_point(&self, flat: usize, out: &mut [f64]) {
        match self.axes.as_slice() {
            [a] => out[0] = a.node(flat),
            [a, b] => {
                out[0] = a.node(flat / b.len());
                out[1] = b.node(flat % b.len());
            }
            _ => unreachable!("mesh dimension is 1 or 2"),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.axes.iter().zip(x).all(|(a, v)| a.locate(*v).is_some())
    }

    /// Halves every space step and the time step.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            time: self.time.refined(factor),
            axes: self.axes.iter().map(|a| a.refined(factor)).collect(),
        }
    }

    pub fn same_as(&self, other: &Mesh) -> bool {
        self.time.same_as(&other.time) && self.axes == other.axes
    }

    pub(crate) fn check_box(&self, spec: &ProblemSpec, eps: f64) -> Result<()> {
        let flow = solve_flow(spec, &self.time)?;
        let margin = Self::noise_margin(spec, eps, 3.0);
        for (i, axis) in self.axes.iter().enumerate() {
            let c = flow.coordinate(i);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo - margin < axis.lo() || hi + margin > axis.hi() {
                return Err(Error::MeshTooSmall {
                    axis: i,
                    lo: axis.lo(),
                    hi: axis.hi(),
                    margin,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_locate_matches_nodes() {
        let a = Axis::new(-1.0, 1.0, 4).unwrap();
        assert_eq!(a.locate(0.0), Some((2, 0.0)));
        assert_eq!(a.locate(1.0), Some((3, 1.0)));
        assert_eq!(a.locate(1.5), None);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let t = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let m = Mesh::new(t, vec![Axis::new(0.0, 3.0, 3).unwrap(), Axis::new(0.0, 4.0, 4).unwrap()]).unwrap();
        assert_eq!(m.space_len(), 20);
        let flat = m.space_index(&[2, 3]);
        let mut p = [0.0; 2];
        m.space_point(flat, &mut p);
        assert_eq!(p, [2.0, 3.0]);
    }

    #[test]
    fn three_dimensional_mesh_rejected() {
        let t = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let a = Axis::new(0.0, 1.0, 4).unwrap();
        assert!(Mesh::new(t, vec![a, a, a]).is_err());
    }
}
