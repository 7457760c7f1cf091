//! Conditioning of GP streams against a dense joint-Gaussian oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use streamflow::gp_stream::{condition, MeanFunction, ObservationSet};
use streamflow::kernels::{build_gram, KernelSpec, DEFAULT_JITTER_SCHEDULE};
use streamflow::Points;

/// Covariance of (s_t, s_u), (s_t, ṡ_u), (ṡ_t, s_u), (ṡ_t, ṡ_u), derived
/// here from the kernel formulas rather than taken from the library.
fn oracle_blocks(k: &KernelSpec, t: f64, u: f64) -> [f64; 4] {
    match k {
        KernelSpec::SquaredExponential { alpha, l } => {
            let r = t - u;
            let e = alpha * (-r * r / (2.0 * l * l)).exp();
            let l2 = l * l;
            // d/du e = e * r / l², d/dt e = -e * r / l², d²/dt du e = e (1/l² - r²/l⁴)
            [e, e * r / l2, -e * r / l2, e * (1.0 / l2 - r * r / (l2 * l2))]
        }
        KernelSpec::Linear { sigma_a, sigma_b } => {
            let b = sigma_b * sigma_b;
            [sigma_a * sigma_a + b * (t - 1.0) * (u - 1.0), b * (t - 1.0), b * (u - 1.0), b]
        }
        KernelSpec::DotProductIncreasing { alpha } => [alpha * t * u, alpha * t, alpha * u, *alpha],
        KernelSpec::DotProductDecreasing { alpha } => {
            [alpha * (t - 1.0) * (u - 1.0), alpha * (t - 1.0), alpha * (u - 1.0), *alpha]
        }
        KernelSpec::Nugget { sigma_w } => [if t == u { sigma_w * sigma_w } else { 0.0 }, 0.0, 0.0, 0.0],
        KernelSpec::Sum { members } => members.iter().fold([0.0; 4], |acc, m| {
            let b = oracle_blocks(m, t, u);
            [acc[0] + b[0], acc[1] + b[1], acc[2] + b[2], acc[3] + b[3]]
        }),
    }
}

/// Condition (s_t, ṡ_t) on y = s at `times` by forming the full joint
/// covariance and applying the Schur complement with an explicit inverse.
fn oracle_condition(k: &KernelSpec, times: &[f64], y: &[f64], jitter: f64, t: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let m = times.len();
    let n = 2 + m;
    let mut s = DMatrix::zeros(n, n);
    let tt = oracle_blocks(k, t, t);
    s[(0, 0)] = tt[0];
    s[(0, 1)] = tt[1];
    s[(1, 0)] = tt[2];
    s[(1, 1)] = tt[3];
    for (j, &tj) in times.iter().enumerate() {
        let b = oracle_blocks(k, t, tj);
        s[(0, 2 + j)] = b[0];
        s[(2 + j, 0)] = b[0];
        s[(1, 2 + j)] = b[2];
        s[(2 + j, 1)] = b[2];
        for (i, &ti) in times.iter().enumerate() {
            s[(2 + j, 2 + i)] = oracle_blocks(k, tj, ti)[0];
        }
        s[(2 + j, 2 + j)] += jitter;
    }
    let syy = s.view((2, 2), (m, m)).into_owned();
    let szy = s.view((0, 2), (2, m)).into_owned();
    let szz = s.view((0, 0), (2, 2)).into_owned();
    let inv = syy.try_inverse().expect("observation covariance invertible");
    let mean = &szy * &inv * DVector::from_column_slice(y);
    let cov = szz - &szy * &inv * szy.transpose();
    ([mean[0], mean[1]], [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]])
}

fn kernel_strategy(m: usize) -> BoxedStrategy<KernelSpec> {
    let se = (0.1f64..2.0, 0.2f64..1.0).prop_map(|(alpha, l)| KernelSpec::SquaredExponential { alpha, l });
    let base = if m == 2 {
        prop_oneof![se, (0.5f64..2.0, 0.5f64..2.0).prop_map(|(a, b)| KernelSpec::linear(a, b))].boxed()
    } else {
        se.boxed()
    };
    let extra = prop_oneof![
        Just(None),
        (0.01f64..1.0).prop_map(|alpha| Some(KernelSpec::DotProductIncreasing { alpha })),
        (0.01f64..1.0).prop_map(|alpha| Some(KernelSpec::DotProductDecreasing { alpha })),
        (0.01f64..0.5).prop_map(|sigma_w| Some(KernelSpec::Nugget { sigma_w })),
    ];
    (base, extra)
        .prop_map(|(b, e)| match e {
            None => b,
            Some(e) => KernelSpec::Sum { members: vec![b, e] },
        })
        .boxed()
}

/// Observation times 0 = t_1 < … < t_M = 1 with gaps of at least 0.1.
fn times_strategy(m: usize) -> BoxedStrategy<Vec<f64>> {
    let interior = m - 2;
    prop::collection::vec(0.0f64..1.0, interior)
        .prop_map(move |mut u| {
            u.sort_by(f64::total_cmp);
            // spread interior points over (0.1, 0.9) keeping order and gaps
            let mut times = vec![0.0];
            let span = 0.8 - 0.1 * interior.saturating_sub(1) as f64;
            for (i, x) in u.iter().enumerate() {
                times.push(0.1 + 0.1 * i as f64 + span * x);
            }
            times.push(1.0);
            times
        })
        .boxed()
}

fn case() -> impl Strategy<Value = (KernelSpec, Vec<f64>, Vec<f64>, f64)> {
    (2usize..=4).prop_flat_map(|m| {
        (
            kernel_strategy(m),
            times_strategy(m),
            prop::collection::vec(-3.0f64..3.0, m),
            prop_oneof![0.0f64..=1.0, (0..m).prop_map(|j| -(j as f64) - 1.0)],
        )
    })
    .prop_map(|(k, times, y, t)| {
        // negative t encodes "exactly the j-th observation time"
        let t = if t < 0.0 { times[(-t - 1.0) as usize] } else { t };
        (k, times, y, t)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_dense_schur_oracle((k, times, y, t) in case()) {
        let bundle = build_gram(&k, &times, &DEFAULT_JITTER_SCHEDULE).unwrap();
        let obs = ObservationSet::new(times.clone(), Points::from_flat(1, y.clone()).unwrap()).unwrap();
        let cg = condition(&bundle, MeanFunction::Zero, &obs, t).unwrap();
        let (mean, cov) = oracle_condition(&k, &times, &y, bundle.jitter(), t);
        for i in 0..2 {
            prop_assert!((cg.mean[0][i] - mean[i]).abs() <= 1e-8, "mean[{}] {} vs {}", i, cg.mean[0][i], mean[i]);
            for j in 0..2 {
                prop_assert!((cg.cov[i][j] - cov[i][j]).abs() <= 1e-8, "cov[{}][{}] {} vs {}", i, j, cg.cov[i][j], cov[i][j]);
            }
        }
    }

    #[test]
    fn joint_position_velocity_covariance_is_psd(
        (k, times) in (2usize..=4).prop_flat_map(|m| (kernel_strategy(m), times_strategy(m))),
        grid in prop::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        let mut pts = times.clone();
        pts.extend(grid);
        let n = pts.len();
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for (a, &ta) in pts.iter().enumerate() {
            for (b, &tb) in pts.iter().enumerate() {
                let blk = k.blocks(ta, tb);
                c[(2 * a, 2 * b)] = blk.c11;
                c[(2 * a, 2 * b + 1)] = blk.c12;
                c[(2 * a + 1, 2 * b)] = blk.c21;
                c[(2 * a + 1, 2 * b + 1)] = blk.c22;
            }
        }
        prop_assert!((&c - c.transpose()).amax() <= 1e-12);
        let scale = c.amax().max(1.0);
        let min = SymmetricEigen::new(c).eigenvalues.min();
        prop_assert!(min >= -1e-9 * scale, "min eigenvalue {}", min);
    }

    #[test]
    fn pinned_at_observations_without_nugget(
        (k, times) in (2usize..=4).prop_flat_map(|m| (kernel_strategy(m), times_strategy(m))),
    ) {
        prop_assume!(!k.has_nugget());
        let bundle = build_gram(&k, &times, &DEFAULT_JITTER_SCHEDULE).unwrap();
        let y: Vec<f64> = (0..times.len()).map(|j| j as f64 - 1.0).collect();
        let obs = ObservationSet::new(times.clone(), Points::from_flat(1, y.clone()).unwrap()).unwrap();
        for (j, &tj) in times.iter().enumerate() {
            let cg = condition(&bundle, MeanFunction::Zero, &obs, tj).unwrap();
            prop_assert!(cg.cov[0][0].max(0.0).sqrt() <= 1e-6);
            prop_assert!((cg.mean[0][0] - y[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn dimensions_condition_independently(
        (k, times) in (2usize..=4).prop_flat_map(|m| (kernel_strategy(m), times_strategy(m))),
        t in 0.0f64..=1.0,
        seed in 0u64..1000,
    ) {
        let m = times.len();
        let d = 3;
        let vals: Vec<f64> = (0..m * d).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 10.0 - 4.0).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = (0..m).flat_map(|r| perm.iter().map(|&p| vals[r * d + p]).collect::<Vec<_>>()).collect();
        let bundle = build_gram(&k, &times, &DEFAULT_JITTER_SCHEDULE).unwrap();
        let a = condition(&bundle, MeanFunction::Zero, &ObservationSet::new(times.clone(), Points::from_flat(d, vals).unwrap()).unwrap(), t).unwrap();
        let b = condition(&bundle, MeanFunction::Zero, &ObservationSet::new(times.clone(), Points::from_flat(d, permuted).unwrap()).unwrap(), t).unwrap();
        prop_assert_eq!(a.cov, b.cov);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.mean[i], a.mean[p]);
        }
    }
}

#[test]
fn linear_kernel_recovers_straight_line() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let k = KernelSpec::linear(1.0, 1.0);
    let bundle = build_gram(&k, &[0.0, 1.0], &DEFAULT_JITTER_SCHEDULE).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x0: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x1: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t: f64 = rng.gen();
        let cg = condition(&bundle, MeanFunction::Zero, &ObservationSet::endpoints(&x0, &x1).unwrap(), t).unwrap();
        for i in 0..2 {
            worst = worst.max((cg.mean[i][0] - ((1.0 - t) * x0[i] + t * x1[i])).abs());
            worst = worst.max((cg.mean[i][1] - (x1[i] - x0[i])).abs());
        }
        for row in cg.cov {
            for v in row {
                worst = worst.max(v.abs());
            }
        }
    }
    assert!(worst <= 1e-8, "max error {worst:e}");
}
