//! Metrics: exact empirical W2, a Monte-Carlo estimate of the marginal
//! vector field, and multi-seed summaries.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::coupling::sq_cost_matrix;
use crate::datasets::PointSampler;
use crate::error::{Error, Result};
use crate::gp_stream::StreamModel;
use crate::points::Points;
use crate::rng::Rng;

/// Exact 2-Wasserstein distance between equal-size empirical sets.
pub fn w2(a: &Points, b: &Points) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Degenerate("non-finite sample in w2".into()));
    }
    let n = a.len();
    let cost = sq_cost_matrix(a, b);
    let assign = assignment::solve(&cost, n);
    Ok((assignment::cost_of(&cost, n, &assign) / n as f64).max(0.0).sqrt())
}

/// Independent endpoint coupling pushed through a stream model.
pub struct StreamSampler<'a> {
    pub source: &'a dyn PointSampler,
    pub target: &'a dyn PointSampler,
    pub stream: StreamModel,
}

impl StreamSampler<'_> {
    /// `n` draws of `(s_t, ṡ_t)`.
    pub fn draw(&self, t: f64, n: usize, rng: &mut Rng) -> Result<(Points, Points)> {
        let d = self.source.dim();
        if self.target.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.target.dim(),
            });
        }
        let x0 = self.source.sample(n, rng);
        let x1 = self.target.sample(n, rng);
        let mut s = Points::zeros(n, d);
        let mut sdot = Points::zeros(n, d);
        for i in 0..n {
            let rows = [x0.row(i), x1.row(i)];
            self.stream.draw_into(t, &rows, rng, s.row_mut(i), sdot.row_mut(i))?;
        }
        Ok((s, sdot))
    }
}

/// Nadaraya–Watson estimate of `E[ṡ_t | s_t = x]` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEstimate {
    pub t: f64,
    pub grid: Points,
    /// Estimated field; rows at undefined points are NaN.
    pub u: Points,
    /// Total kernel weight per grid point.
    pub weight: Vec<f64>,
    /// Kish effective sample size per grid point.
    pub effective_count: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl FieldEstimate {
    pub fn is_defined(&self, i: usize) -> bool {
        self.weight[i] >= UNDEFINED_WEIGHT
    }
}

/// Grid points whose total kernel weight falls below this are undefined.
pub const UNDEFINED_WEIGHT: f64 = 1e-8;

/// Per-dimension Silverman bandwidth `1.06 · sd · n^(-1/5)`.
pub fn silverman_bandwidth(draws: &Points) -> Vec<f64> {
    let n = draws.len() as f64;
    let cov = draws.covariance();
    let d = draws.dim();
    (0..d)
        .map(|k| {
            let h = 1.06 * cov[k * d + k].max(0.0).sqrt() * n.powf(-0.2);
            if h > 0.0 {
                h
            } else {
                1e-3
            }
        })
        .collect()
}

/// Estimate the marginal field at time `t` from `n_draws` stream samples.
///
/// Uses a product Gaussian kernel with unnormalized weights; the bandwidth
/// defaults to Silverman's rule on the drawn positions.
pub fn oracle_field(
    sampler: &StreamSampler<'_>,
    t: f64,
    grid: &Points,
    n_draws: usize,
    bandwidth: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<FieldEstimate> {
    if n_draws < 1000 {
        return Err(Error::config("oracle_field needs at least 1000 draws"));
    }
    let (s, sdot) = sampler.draw(t, n_draws, rng)?;
    nadaraya_watson(t, &s, &sdot, grid, bandwidth)
}

/// Kernel regression of `values` on `positions`, evaluated at `grid`.
pub fn nadaraya_watson(
    t: f64,
    positions: &Points,
    values: &Points,
    grid: &Points,
    bandwidth: Option<&[f64]>,
) -> Result<FieldEstimate> {
    let d = positions.dim();
    if grid.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: grid.dim() });
    }
    let h = match bandwidth {
        Some(h) => {
            if h.len() != d || h.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config("bandwidth must be positive, one value per dimension"));
            }
            h.to_vec()
        }
        None => silverman_bandwidth(positions),
    };
    let inv: Vec<f64> = h.iter().map(|v| 0.5 / (v * v)).collect();
    let dv = values.dim();
    let mut u = Points::zeros(grid.len(), dv);
    let mut weight = vec![0.0; grid.len()];
    let mut eff = vec![0.0; grid.len()];
    let mut acc = vec![0.0; dv];
    for (g, x) in grid.rows().enumerate() {
        acc.fill(0.0);
        let (mut sw, mut sw2) = (0.0, 0.0);
        for (p, v) in positions.rows().zip(values.rows()) {
            let e: f64 = p.iter().zip(x).zip(&inv).map(|((a, b), c)| (a - b) * (a - b) * c).sum();
            let w = (-e).exp();
            if w == 0.0 {
                continue;
            }
            sw += w;
            sw2 += w * w;
            for (a, vi) in acc.iter_mut().zip(v) {
                *a += w * vi;
            }
        }
        weight[g] = sw;
        let out = u.row_mut(g);
        if sw >= UNDEFINED_WEIGHT {
            eff[g] = sw * sw / sw2;
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = a / sw;
            }
        } else {
            out.fill(f64::NAN);
        }
    }
    Ok(FieldEstimate {
        t,
        grid: grid.clone(),
        u,
        weight,
        effective_count: eff,
        bandwidth: h,
    })
}

/// One benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub algorithm: String,
    pub scheme: String,
    pub w2: f64,
    pub train_seconds: f64,
    pub generate_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub mean: f64,
    /// Sample sd / √n; NaN when n = 1.
    pub se: f64,
    pub n: usize,
}

/// Mean and standard error of `values`.
pub fn mean_se(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("group"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, f64::NAN));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Group runs by `key` (in first-seen order) and summarize W2.
pub fn summarize(runs: &[RunMetrics], key: impl Fn(&RunMetrics) -> String) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in runs {
        let k = key(r);
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => g.1.push(r.w2),
            None => groups.push((k, vec![r.w2])),
        }
    }
    groups
        .into_iter()
        .map(|(group, vals)| {
            let (mean, se) = mean_se(&vals)?;
            Ok(SummaryRow {
                group,
                mean,
                se,
                n: vals.len(),
            })
        })
        .collect()
}

/// Mean and SE of the paired difference `a[i] - b[i]`.
pub fn paired_diff(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_se(&d)
}

/// CSV `seed,algorithm,scheme,w2,train_s,gen_s`.
pub fn write_metrics_csv<W: Write>(runs: &[RunMetrics], mut w: W) -> io::Result<()> {
    writeln!(w, "seed,algorithm,scheme,w2,train_s,gen_s")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{:.3},{:.3}",
            r.seed, r.algorithm, r.scheme, r.w2, r.train_seconds, r.generate_seconds
        )?;
    }
    Ok(())
}

/// CSV `group,mean,se,n`.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "group,mean,se,n")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.group, r.mean, r.se, r.n)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Empirical, GaussianMixture};
    use crate::rng;

    fn p1(v: &[f64]) -> Points {
        Points::from_flat(1, v.to_vec()).unwrap()
    }

    #[test]
    fn w2_examples() {
        let a = p1(&[0.3, -1.0, 2.0]);
        assert_eq!(w2(&a, &a).unwrap(), 0.0);
        assert!((w2(&p1(&[0.0]), &p1(&[3.0])).unwrap() - 3.0).abs() < 1e-15);
        assert!((w2(&p1(&[0.0, 1.0]), &p1(&[2.0, 5.0])).unwrap() - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn w2_size_mismatch() {
        assert!(matches!(
            w2(&p1(&[0.0, 1.0]), &p1(&[0.0])),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn summary_examples() {
        let runs: Vec<RunMetrics> = [(1.0, "a"), (3.0, "a"), (2.0, "b"), (2.0, "b")]
            .iter()
            .enumerate()
            .map(|(i, &(w2, g))| RunMetrics {
                seed: i as u64,
                algorithm: g.into(),
                scheme: "none".into(),
                w2,
                train_seconds: 0.0,
                generate_seconds: 0.0,
            })
            .collect();
        let s = summarize(&runs, |r| r.algorithm.clone()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].mean, s[0].se, s[0].n), (2.0, 1.0, 2));
        assert_eq!((s[1].mean, s[1].se), (2.0, 0.0));
        assert!(summarize(&[], |r| r.algorithm.clone()).is_err());
    }

    #[test]
    fn summary_matches_recomputation() {
        let mut r = rng::stream(7, 0);
        let vals: Vec<f64> = (0..100).map(|_| rand::Rng::gen::<f64>(&mut r)).collect();
        let (mean, se) = mean_se(&vals).unwrap();
        // two-pass textbook formula, computed independently
        let n = vals.len() as f64;
        let sum: f64 = vals.iter().sum();
        let sumsq: f64 = vals.iter().map(|v| v * v).sum();
        let var = (sumsq - sum * sum / n) / (n - 1.0);
        assert!((mean - sum / n).abs() < 1e-14);
        assert!((se - (var / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn paired_difference() {
        let (m, se) = paired_diff(&[3.0, 5.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m, se), (2.5, 0.5));
    }

    #[test]
    fn point_mass_oracle_is_constant() {
        let src = Empirical(p1(&[0.0]));
        let tgt = Empirical(p1(&[1.5]));
        let sampler = StreamSampler {
            source: &src,
            target: &tgt,
            stream: StreamModel::Interpolant,
        };
        let grid = p1(&[0.75, 0.7501, 3.0]);
        let est = oracle_field(&sampler, 0.5, &grid, 1000, Some(&[0.01]), &mut rng::stream(1, 0)).unwrap();
        assert_eq!(est.u.row(0)[0], 1.5);
        assert!((est.u.row(1)[0] - 1.5).abs() < 1e-12);
        assert!(!est.is_defined(2) && est.u.row(2)[0].is_nan());
    }

    #[test]
    fn gaussian_regression_oracle() {
        // x0 ~ N(0,1), x1 ~ N(2,1), straight-line streams
        let src = GaussianMixture::standard(1);
        let tgt = GaussianMixture::new(vec![vec![2.0]], vec![1.0], vec![1.0]).unwrap();
        let sampler = StreamSampler {
            source: &src,
            target: &tgt,
            stream: StreamModel::Interpolant,
        };
        let mut r = rng::stream(2, 0);
        for t in [0.1, 0.5, 0.9] {
            let var: f64 = (1.0 - t) * (1.0 - t) + t * t;
            let sd = var.sqrt();
            let xs: Vec<f64> = (0..9).map(|k| 2.0 * t + sd * (-2.0 + 0.5 * k as f64)).collect();
            let est = oracle_field(&sampler, t, &p1(&xs), 1_000_000, None, &mut r).unwrap();
            for (i, x) in xs.iter().enumerate() {
                let exact = 2.0 + (2.0 * t - 1.0) / var * (x - 2.0 * t);
                let got = est.u.row(i)[0];
                assert!((got - exact).abs() <= 0.05, "t={t} x={x}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn symmetric_target_zero_first_coordinate() {
        let src = GaussianMixture::standard(2);
        let tgt = GaussianMixture::two_gaussians_mirrored();
        let sampler = StreamSampler {
            source: &src,
            target: &tgt,
            stream: StreamModel::Interpolant,
        };
        let grid = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        for t in [0.2, 0.5, 0.8] {
            let est = oracle_field(&sampler, t, &grid, 200_000, Some(&[1.0, 1.0]), &mut rng::stream(3, 0)).unwrap();
            assert!(est.is_defined(0));
            let se = 3.0 * 3.0 / est.effective_count[0].sqrt();
            assert!(est.u.row(0)[0].abs() <= se.max(0.05), "t={t}: {:?}", est.u.row(0));
        }
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "seed,algorithm,scheme,w2,train_s,gen_s\n");
        let mut buf = Vec::new();
        write_summary_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "group,mean,se,n\n");
    }
}
