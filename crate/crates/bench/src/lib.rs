//! Fixtures shared by the criterion benchmarks.

use streamflow::datasets::{GaussianMixture, PointSampler};
use streamflow::rng;
use streamflow::Points;

/// `n` standard Gaussian and `n` 2-Gaussian points in 2D.
pub fn point_pair(n: usize, seed: u64) -> (Points, Points) {
    let a = GaussianMixture::standard(2).sample(n, &mut rng::stream(seed, 0));
    let b = GaussianMixture::two_gaussians().sample(n, &mut rng::stream(seed, 1));
    (a, b)
}
