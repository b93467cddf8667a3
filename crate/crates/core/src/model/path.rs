use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::error::{Error, Result};

/// Trajectory in ℝⁿ on a [`TimeGrid`], stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SpacePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.len() * dim {
            return Err(Error::invalid(format!(
                "space path needs {} values for {} nodes in dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.len() * dim];
        for (k, chunk) in values.chunks_mut(dim).enumerate() {
            f(grid.node(k), chunk);
        }
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values of one coordinate along the path.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.dim).copied().collect()
    }

    /// Piecewise-linear interpolation, exact at nodes.
    pub fn interpolate(&self, s: f64) -> Result<Vec<f64>> {
        let (k, w) = self.grid.locate(s)?;
        let a = self.point(k);
        if w == 0.0 {
            return Ok(a.to_vec());
        }
        let b = self.point(k + 1);
        if w == 1.0 {
            return Ok(b.to_vec());
        }
        Ok(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
    }

    /// Maximum over nodes of the Euclidean distance to `other`.
    pub fn sup_distance(&self, other: &SpacePath) -> Result<f64> {
        if !self.grid.same_as(&other.grid) || self.dim != other.dim {
            return Err(Error::IncompatibleGrid("sup distance between paths on different grids".into()));
        }
        Ok(self
            .values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| euclid_dist(a, b))
            .fold(0.0, f64::max))
    }
}

/// Scalar trajectory on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl ScalarPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "scalar path needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interpolate(&self, s: f64) -> Result<f64> {
        let (k, w) = self.grid.locate(s)?;
        Ok(if w == 0.0 {
            self.values[k]
        } else if w == 1.0 {
            self.values[k + 1]
        } else {
            (1.0 - w) * self.values[k] + w * self.values[k + 1]
        })
    }

    pub fn sup_distance(&self, other: &ScalarPath) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::IncompatibleGrid("sup distance between paths on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
