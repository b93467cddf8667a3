use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::TimeGrid;

/// Brownian increments for one trajectory.
///
/// The generator is ChaCha8 keyed by `master_seed` with the stream selected by
/// `trajectory_index`, so trajectory `i` sees the same increments no matter
/// which thread builds it or in which order.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStream {
    master_seed: u64,
    trajectory_index: u64,
    steps: usize,
    dim: usize,
    increments: Vec<f64>,
}

pub fn make_noise(master_seed: u64, trajectory_index: u64, grid: &TimeGrid, dim: usize) -> NoiseStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trajectory_index);
    let scale = grid.step().sqrt();
    let increments = (0..grid.steps() * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoiseStream {
        master_seed,
        trajectory_index,
        steps: grid.steps(),
        dim,
        increments,
    }
}

impl NoiseStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// ΔW over `[s_k, s_{k+1}]`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// The antithetic stream `-ΔW`.
    pub fn negated(&self) -> NoiseStream {
        NoiseStream {
            increments: self.increments.iter().map(|x| -x).collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_identical_streams() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let a = make_noise(7, 3, &g, 2);
        let b = make_noise(7, 3, &g, 2);
        assert_eq!(a.increments(), b.increments());
        assert_ne!(a.increments(), make_noise(8, 3, &g, 2).increments());
    }

    #[test]
    fn neighbouring_streams_uncorrelated() {
        let g = TimeGrid::new(0.0, 1.0, 10_000).unwrap();
        let a = make_noise(11, 0, &g, 1);
        let b = make_noise(11, 1, &g, 1);
        let n = a.increments().len() as f64;
        let ma = a.increments().iter().sum::<f64>() / n;
        let mb = b.increments().iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.increments().iter().zip(b.increments()) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        let rho = sab / (saa * sbb).sqrt();
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }

    #[test]
    fn pooled_variance_matches_step() {
        // 10⁴ increments, Δ = 0.01; the chi-square 99.9% interval is ≈ [0.0094, 0.0106].
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let pooled: Vec<f64> = (0..100)
            .flat_map(|i| make_noise(2024, i, &g, 1).increments().to_vec())
            .collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.0094..=0.0106).contains(&var), "var = {var}");
        // mean within 4 standard errors of zero
        assert!(mean.abs() < 4.0 * (0.01f64 / n).sqrt());
    }
}
