//! Adaptive and fixed-step generation agree on a trained field.

use streamflow::datasets::{GaussianMixture, PointSampler};
use streamflow::ode::{generate, IntegratorSpec};
use streamflow::rng;
use streamflow::trainer::{train, TrainConfig};

#[test]
fn dopri5_matches_fine_rk4_on_trained_model() {
    let target = GaussianMixture::two_gaussians().sample(200, &mut rng::stream(1, 0));
    let config = TrainConfig {
        iterations: 400,
        hidden: vec![32, 32],
        ..TrainConfig::default()
    };
    let (model, _) = train(&config, &GaussianMixture::standard(2), &target).unwrap();
    let x0 = GaussianMixture::standard(2).sample(200, &mut rng::stream(2, 0));
    let stops = [0.5, 1.0];
    let a = generate(&model, &x0, &IntegratorSpec::dopri5(1e-8, 1e-8), &stops, None).unwrap();
    let b = generate(&model, &x0, &IntegratorSpec::Rk4 { n_steps: 1000 }, &stops, None).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        let sq: f64 = pa.as_slice().iter().zip(pb.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
        let rms = (sq / pa.len() as f64).sqrt();
        assert!(rms <= 1e-4, "rms {rms:e}");
    }
}
