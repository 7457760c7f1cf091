//! Synthetic 2D toy datasets.
//!
//! Mixture locations and the multi-slice layouts are reconstructions: the
//! defaults are chosen to match the scale of the usual toy figures and can be
//! overridden through [`DatasetSpec`].

use std::io::{self, Write};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{self, Rng};

/// Anything that can produce i.i.d. points.
pub trait PointSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut Rng) -> Points;
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub sds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, sds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = GaussianMixture { means, sds, weights };
        m.validate()?;
        Ok(m)
    }

    pub fn standard(dim: usize) -> Self {
        GaussianMixture {
            means: vec![vec![0.0; dim]],
            sds: vec![1.0],
            weights: vec![1.0],
        }
    }

    /// Components at (-3, 3) and (3, -3), sd 0.5, equal weights.
    pub fn two_gaussians() -> Self {
        GaussianMixture {
            means: vec![vec![-3.0, 3.0], vec![3.0, -3.0]],
            sds: vec![0.5, 0.5],
            weights: vec![0.5, 0.5],
        }
    }

    /// Mirror image of [`two_gaussians`](Self::two_gaussians): (-3, -3) and (3, 3).
    pub fn two_gaussians_mirrored() -> Self {
        GaussianMixture {
            means: vec![vec![-3.0, -3.0], vec![3.0, 3.0]],
            sds: vec![0.5, 0.5],
            weights: vec![0.5, 0.5],
        }
    }

    /// The two-component mixture plus a third component at (0, 3.5).
    pub fn three_gaussians() -> Self {
        GaussianMixture {
            means: vec![vec![-3.0, 3.0], vec![3.0, -3.0], vec![0.0, 3.5]],
            sds: vec![0.5, 0.5, 0.5],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        if self.sds.len() != k || self.weights.len() != k {
            return Err(Error::config("mixture means, sds and weights must have equal length"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::config("mixture means must share a positive dimension"));
        }
        if self.sds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("mixture sds must be positive"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    /// Draw points and report which component produced each.
    pub fn sample_labeled(&self, n: usize, rng: &mut Rng) -> (Points, Vec<usize>) {
        let d = self.dim();
        let mut out = Points::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // Single-component mixtures skip the selection draw so they
            // coincide with a plain Gaussian.
            let k = if self.means.len() == 1 { 0 } else { self.pick(rng.gen::<f64>()) };
            let row = out.row_mut(i);
            for (x, m) in row.iter_mut().zip(&self.means[k]) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + self.sds[k] * z;
            }
            labels.push(k);
        }
        (out, labels)
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        self.means
            .iter()
            .zip(&self.sds)
            .zip(&self.weights)
            .map(|((m, s), w)| {
                let r2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w * (-(r2) / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s).powf(d / 2.0)
            })
            .sum()
    }
}

impl PointSampler for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Points {
        self.sample_labeled(n, rng).0
    }
}

/// Uniform resampling (with replacement) of a fixed point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical(pub Points);

impl PointSampler for Empirical {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Points {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.0.len())).collect();
        self.0.select(&idx)
    }
}

/// Parameters of the paired multi-slice layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceLayout {
    /// Half-width of the horizontal extent of subjects.
    pub spread: f64,
    /// Horizontal/vertical offset of the slices.
    pub offset: f64,
    /// Per-point observation noise sd.
    pub noise: f64,
}

impl SliceLayout {
    pub fn paired_v_default() -> Self {
        SliceLayout {
            spread: 3.0,
            offset: 2.0,
            noise: 0.15,
        }
    }

    pub fn crossing_default() -> Self {
        SliceLayout {
            spread: 2.0,
            offset: 2.5,
            noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetVariant {
    StdGaussian { dim: usize },
    GaussianMixture(GaussianMixture),
    /// Subjects observed at t = 0.5 (a horizontal bar) and t = 1 (a V shape).
    /// The t = 0 end is a standard Gaussian source drawn separately.
    PairedV(SliceLayout),
    /// Subjects observed at t = 0, 0.5, 1. The t ∈ {0, 1} slices sit on the
    /// left, the t = 0.5 slice on the right with its vertical order flipped,
    /// so streams cross twice.
    Crossing(SliceLayout),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub variant: DatasetVariant,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Generated train/test data. Single-distribution variants have one slice;
/// multi-slice variants have row-aligned slices (row = subject).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub train: Vec<Points>,
    pub test: Vec<Points>,
    /// True when the t = 0 end is a standard Gaussian source that is not part
    /// of `train`/`test`.
    pub noise_source: bool,
}

impl Dataset {
    /// Subject id of every train row in every slice (identity alignment).
    pub fn train_groups(&self) -> Vec<Vec<usize>> {
        self.train.iter().map(|s| (0..s.len()).collect()).collect()
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            DatasetVariant::StdGaussian { dim } if *dim == 0 => {
                Err(Error::config("std_gaussian dimension must be at least 1"))
            }
            DatasetVariant::GaussianMixture(m) => m.validate(),
            DatasetVariant::PairedV(l) | DatasetVariant::Crossing(l) => {
                if !(l.spread > 0.0 && l.noise >= 0.0 && l.offset.is_finite()) {
                    Err(Error::config("slice layout needs spread > 0 and noise >= 0"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Generate the dataset. Train and test use disjoint rng streams.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut train_rng = rng::stream(spec.seed, rng::streams::TRAIN_DATA);
    let mut test_rng = rng::stream(spec.seed, rng::streams::TEST_DATA);
    let ds = match &spec.variant {
        DatasetVariant::StdGaussian { dim } => {
            let g = GaussianMixture::standard(*dim);
            Dataset {
                times: vec![1.0],
                train: vec![g.sample(spec.n_train, &mut train_rng)],
                test: vec![g.sample(spec.n_test, &mut test_rng)],
                noise_source: false,
            }
        }
        DatasetVariant::GaussianMixture(g) => Dataset {
            times: vec![1.0],
            train: vec![g.sample(spec.n_train, &mut train_rng)],
            test: vec![g.sample(spec.n_test, &mut test_rng)],
            noise_source: false,
        },
        DatasetVariant::PairedV(l) => Dataset {
            times: vec![0.5, 1.0],
            train: paired_v(l, spec.n_train, &mut train_rng),
            test: paired_v(l, spec.n_test, &mut test_rng),
            noise_source: true,
        },
        DatasetVariant::Crossing(l) => Dataset {
            times: vec![0.0, 0.5, 1.0],
            train: crossing(l, spec.n_train, &mut train_rng),
            test: crossing(l, spec.n_test, &mut test_rng),
            noise_source: false,
        },
    };
    Ok(ds)
}

fn noisy(rng: &mut Rng, x: f64, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    x + sd * z
}

fn paired_v(l: &SliceLayout, n: usize, rng: &mut Rng) -> Vec<Points> {
    let mut mid = Points::zeros(n, 2);
    let mut end = Points::zeros(n, 2);
    for i in 0..n {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let x = l.spread * u;
        mid.row_mut(i).copy_from_slice(&[noisy(rng, x, l.noise), noisy(rng, l.offset, l.noise)]);
        let y = -l.offset - l.spread + 2.0 * l.spread * u.abs();
        end.row_mut(i).copy_from_slice(&[noisy(rng, x, l.noise), noisy(rng, y, l.noise)]);
    }
    vec![mid, end]
}

fn crossing(l: &SliceLayout, n: usize, rng: &mut Rng) -> Vec<Points> {
    let mut slices = vec![Points::zeros(n, 2), Points::zeros(n, 2), Points::zeros(n, 2)];
    for i in 0..n {
        let y: f64 = l.spread * rng.gen_range(-1.0..1.0);
        let rows = [(-l.offset, y), (l.offset, -y), (-l.offset, y)];
        for (slice, (x, y)) in slices.iter_mut().zip(rows) {
            let px = noisy(rng, x, l.noise);
            let py = noisy(rng, y, l.noise);
            slice.row_mut(i).copy_from_slice(&[px, py]);
        }
    }
    slices
}

/// Write slices as CSV `slice,row,dim,value`.
pub fn write_slices_csv<W: Write>(slices: &[Points], mut w: W) -> io::Result<()> {
    writeln!(w, "slice,row,dim,value")?;
    for (s, pts) in slices.iter().enumerate() {
        for (r, row) in pts.rows().enumerate() {
            for (d, v) in row.iter().enumerate() {
                writeln!(w, "{s},{r},{d},{v:e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: DatasetVariant, n: usize) -> DatasetSpec {
        DatasetSpec {
            variant,
            n_train: n,
            n_test: n,
            seed: 5,
        }
    }

    #[test]
    fn std_gaussian_moments() {
        let ds = generate(&spec(DatasetVariant::StdGaussian { dim: 2 }, 100_000)).unwrap();
        let p = &ds.train[0];
        let m = p.mean();
        let c = p.covariance();
        assert!(m.iter().all(|v| v.abs() < 0.02), "{m:?}");
        assert!((c[0] - 1.0).abs() < 0.02 && (c[3] - 1.0).abs() < 0.02 && c[1].abs() < 0.02);
    }

    #[test]
    fn single_component_mixture_is_gaussian() {
        let g = GaussianMixture::standard(2);
        let a = generate(&spec(DatasetVariant::GaussianMixture(g), 50)).unwrap();
        let b = generate(&spec(DatasetVariant::StdGaussian { dim: 2 }, 50)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn component_frequencies() {
        let g = GaussianMixture::two_gaussians();
        let n = 100_000;
        let (_, labels) = g.sample_labeled(n, &mut rng::stream(9, 0));
        let ones = labels.iter().filter(|&&k| k == 1).count() as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn deterministic_and_disjoint_streams() {
        let s = spec(DatasetVariant::GaussianMixture(GaussianMixture::two_gaussians()), 20);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let ds = generate(&s).unwrap();
        assert_ne!(ds.train[0], ds.test[0]);
    }

    #[test]
    fn crossing_layout_sides() {
        let ds = generate(&spec(DatasetVariant::Crossing(SliceLayout::crossing_default()), 200))
            .unwrap();
        assert_eq!(ds.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.train.len(), 3);
        for i in 0..200 {
            assert!(ds.train[0].row(i)[0] < 0.0);
            assert!(ds.train[1].row(i)[0] > 0.0);
            assert!(ds.train[2].row(i)[0] < 0.0);
        }
        // vertical order flips between t = 0 and t = 0.5
        let corr: f64 = (0..200).map(|i| ds.train[0].row(i)[1] * ds.train[1].row(i)[1]).sum();
        assert!(corr < 0.0);
    }

    #[test]
    fn paired_v_layout() {
        let ds = generate(&spec(DatasetVariant::PairedV(SliceLayout::paired_v_default()), 50))
            .unwrap();
        assert!(ds.noise_source);
        assert_eq!(ds.times, vec![0.5, 1.0]);
        assert_eq!(ds.train[0].len(), 50);
        assert_eq!(ds.train[1].len(), 50);
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![1.0], vec![0.5]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![0.0], vec![1.0]).is_err());
    }
}
