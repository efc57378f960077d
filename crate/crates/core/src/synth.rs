//! Gaussian-mixture datasets for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const NOISE_SEED_SALT: u64 = 0x6a09_e667_f3bc_c908;

/// Cluster means drawn uniformly from `[-1, 1]^d`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Dataset,
    scale: Option<Vec<f32>>,
}

impl GaussianMixture {
    pub fn new(d: usize, clusters: usize, seed: u64) -> Result<Self> {
        if d == 0 || clusters == 0 {
            return Err(Error::invalid("clusters", "d and clusters must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..d * clusters).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
        Ok(Self {
            means: Dataset::new(means, d)?,
            scale: None,
        })
    }

    /// Scales coordinate `j` of every sample by `(j + 1)^-alpha`, so
    /// variance decays along the axes as in real embedding data.
    pub fn with_decay(mut self, alpha: f32) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        self.scale = (alpha > 0.0).then(|| (0..self.d()).map(|j| ((j + 1) as f32).powf(-alpha)).collect());
        Ok(self)
    }

    /// Cluster means before any decay is applied.
    pub fn means(&self) -> &Dataset {
        &self.means
    }

    pub fn d(&self) -> usize {
        self.means.d()
    }

    /// `n` points; point `i` belongs to cluster `i mod clusters` and is its
    /// mean plus `N(0, sigma² I)` noise, then scaled by the decay if set.
    pub fn sample(&self, n: usize, sigma: f32, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        let d = self.means.d();
        let k = self.means.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SEED_SALT);
        let mut data = Vec::with_capacity(n * d);
        if sigma == 0.0 {
            for i in 0..n {
                data.extend_from_slice(self.means.row(i % k));
            }
        } else {
            let noise = Normal::new(0.0f32, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
            for i in 0..n {
                for &mu in self.means.row(i % k) {
                    data.push(mu + noise.sample(&mut rng));
                }
            }
        }
        if let Some(scale) = &self.scale {
            for row in data.chunks_exact_mut(d) {
                row.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
            }
        }
        Dataset::new(data, d)
    }
}

/// Convenience: a fresh mixture and `n` samples from it, both from `seed`.
pub fn gaussian_mixture(n: usize, d: usize, clusters: usize, sigma: f32, seed: u64) -> Result<Dataset> {
    GaussianMixture::new(d, clusters, seed)?.sample(n, sigma, seed)
}
