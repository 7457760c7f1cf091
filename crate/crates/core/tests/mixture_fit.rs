//! Mixture sampling against its density: chi-squared goodness of fit.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use streamflow::datasets::{GaussianMixture, PointSampler};
use streamflow::rng;

/// Probability mass of each cell of a regular grid on [lo, hi]², plus the
/// remainder outside it, computed from normal CDFs.
fn cell_masses(m: &GaussianMixture, lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let edges: Vec<f64> = (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect();
    let mut p = vec![0.0; k * k + 1];
    for c in 0..m.weights.len() {
        let mu = &m.means[c];
        let n = Normal::new(0.0, m.sds[c]).unwrap();
        let mass = |axis: usize, i: usize| n.cdf(edges[i + 1] - mu[axis]) - n.cdf(edges[i] - mu[axis]);
        for i in 0..k {
            for j in 0..k {
                p[i * k + j] += m.weights[c] * mass(0, i) * mass(1, j);
            }
        }
    }
    let inside: f64 = p[..k * k].iter().sum();
    p[k * k] = (1.0 - inside).max(0.0);
    p
}

fn chi_squared_p_value(m: &GaussianMixture, seed: u64) -> f64 {
    p_value_against(m, m, seed)
}

fn p_value_against(sampled: &GaussianMixture, m: &GaussianMixture, seed: u64) -> f64 {
    let (lo, hi, k) = (-5.0, 5.0, 10);
    let n = 10_000;
    let pts = sampled.sample(n, &mut rng::stream(seed, 0));
    let mut counts = vec![0.0; k * k + 1];
    for r in pts.rows() {
        let cell = |x: f64| ((x - lo) / (hi - lo) * k as f64).floor();
        let (i, j) = (cell(r[0]), cell(r[1]));
        if (0.0..k as f64).contains(&i) && (0.0..k as f64).contains(&j) {
            counts[i as usize * k + j as usize] += 1.0;
        } else {
            counts[k * k] += 1.0;
        }
    }
    // pool cells with expected count below 5
    let probs = cell_masses(m, lo, hi, k);
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (o, p) in counts.iter().zip(&probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pool_obs += o;
            pool_exp += e;
        } else {
            stat += (o - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_exp > 0.0 {
        stat += (pool_obs - pool_exp).powi(2) / pool_exp.max(1e-12);
        cells += 1;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn two_gaussian_mixture_fits_density() {
    let p = chi_squared_p_value(&GaussianMixture::two_gaussians(), 1);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn three_gaussian_mixture_fits_density() {
    let p = chi_squared_p_value(&GaussianMixture::three_gaussians(), 2);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn unequal_weights_fit_density() {
    let m = GaussianMixture::new(vec![vec![-1.0, 0.0], vec![1.5, 1.0]], vec![0.7, 1.2], vec![0.3, 0.7]).unwrap();
    let p = chi_squared_p_value(&m, 3);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn wrong_weights_are_rejected() {
    let sampled = GaussianMixture::new(vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5], vec![0.45, 0.55]).unwrap();
    let claimed = GaussianMixture::new(vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
    let p = p_value_against(&sampled, &claimed, 4);
    assert!(p < 0.01, "p = {p}");
}
