//! Deterministic synthetic datasets.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`, which is a fixed, portable stream. Gaussian
//! noise uses the ziggurat sampler of `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::VectorDataset;
use crate::error::{Error, Result};

/// Isotropic Gaussian mixture with centers drawn uniformly in `[0, 1]^dim`.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    centers: Vec<Vec<f32>>,
    spread: f32,
}

impl GaussianMixture {
    pub fn new(dim: usize, clusters: usize, spread: f32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(dim, clusters, spread, &mut rng)
    }

    fn with_rng(dim: usize, clusters: usize, spread: f32, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim == 0 || clusters == 0 {
            return Err(Error::invalid("dim and cluster count must be positive"));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::invalid(format!(
                "spread must be positive, got {spread}"
            )));
        }
        let centers = (0..clusters)
            .map(|_| (0..dim).map(|_| rng.random::<f32>()).collect())
            .collect();
        Ok(Self {
            dim,
            centers,
            spread,
        })
    }

    pub fn centers(&self) -> &[Vec<f32>] {
        &self.centers
    }

    pub fn spread(&self) -> f32 {
        self.spread
    }

    /// Point `i` is drawn around center `i mod g`.
    fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<VectorDataset> {
        self.sample_weighted(n, |i| i % self.centers.len(), rng)
    }

    fn sample_weighted(
        &self,
        n: usize,
        center_of: impl Fn(usize) -> usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<VectorDataset> {
        let mut data = Vec::with_capacity(n * self.dim);
        for i in 0..n {
            let center = &self.centers[center_of(i)];
            for &c in center {
                let z: f32 = rng.sample(StandardNormal);
                data.push(c + self.spread * z);
            }
        }
        VectorDataset::new(self.dim, data)
    }

    /// Draws `n` points, cycling through the centers.
    pub fn sample(&self, n: usize, seed: u64) -> Result<VectorDataset> {
        self.sample_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Gaussian mixture dataset: `g` uniform centers, points split evenly across
/// them with isotropic noise of standard deviation `spread`.
pub fn generate_clustered(
    n: usize,
    dim: usize,
    g: usize,
    spread: f32,
    seed: u64,
) -> Result<VectorDataset> {
    clustered_with_centers(n, dim, g, spread, seed).map(|(ds, _)| ds)
}

/// As [`generate_clustered`], also returning the generating mixture.
pub fn clustered_with_centers(
    n: usize,
    dim: usize,
    g: usize,
    spread: f32,
    seed: u64,
) -> Result<(VectorDataset, GaussianMixture)> {
    if g == 0 || n < g {
        return Err(Error::invalid(format!(
            "need n >= g >= 1, got n={n}, g={g}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = GaussianMixture::with_rng(dim, g, spread, &mut rng)?;
    let ds = mixture.sample_with(n, &mut rng)?;
    Ok((ds, mixture))
}

/// Mixture where cluster 0 receives `heavy_fraction` of the points and the
/// rest are spread evenly over the remaining `g - 1` clusters.
pub fn generate_skewed(
    n: usize,
    dim: usize,
    g: usize,
    heavy_fraction: f64,
    spread: f32,
    seed: u64,
) -> Result<VectorDataset> {
    if g < 2 || n < g {
        return Err(Error::invalid(format!(
            "need n >= g >= 2, got n={n}, g={g}"
        )));
    }
    if !(0.0..1.0).contains(&heavy_fraction) {
        return Err(Error::invalid("heavy_fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = GaussianMixture::with_rng(dim, g, spread, &mut rng)?;
    let heavy = (n as f64 * heavy_fraction).round() as usize;
    mixture.sample_weighted(
        n,
        |i| {
            if i < heavy {
                0
            } else {
                1 + (i - heavy) % (g - 1)
            }
        },
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::squared_l2;

    #[test]
    fn tiny_spread_gives_near_identical_points() {
        let ds = generate_clustered(10, 2, 1, 1e-6, 5).unwrap();
        for row in ds.rows() {
            assert!(squared_l2(row, ds.row(0)).sqrt() < 1e-4);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_clustered(200, 7, 4, 0.1, 42).unwrap();
        let b = generate_clustered(200, 7, 4, 0.1, 42).unwrap();
        let c = generate_clustered(200, 7, 4, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_invalid_counts() {
        assert!(generate_clustered(3, 2, 4, 0.1, 0).is_err());
        assert!(generate_clustered(3, 2, 0, 0.1, 0).is_err());
        assert!(generate_clustered(3, 2, 1, 0.0, 0).is_err());
        assert!(generate_clustered(3, 0, 1, 0.1, 0).is_err());
    }

    #[test]
    fn points_stay_near_their_center() {
        let (ds, mix) = clustered_with_centers(400, 4, 4, 0.01, 9).unwrap();
        for (i, row) in ds.rows().enumerate() {
            let c = &mix.centers()[i % 4];
            // 4 dims at sigma 0.01: 8 sigma in norm is far beyond any plausible draw
            assert!(squared_l2(row, c).sqrt() < 0.08);
        }
    }

    #[test]
    fn skewed_mass() {
        let ds = generate_skewed(1000, 3, 5, 0.9, 0.01, 1).unwrap();
        assert_eq!(ds.len(), 1000);
        let first = ds.row(0).to_vec();
        let near = ds
            .rows()
            .filter(|r| squared_l2(r, &first).sqrt() < 0.1)
            .count();
        assert!(near >= 900);
    }
}
