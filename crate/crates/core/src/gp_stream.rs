//! Conditional law of a stream and its velocity given pinned observations.
//!
//! Each dimension carries an independent GP with the same kernel, so the
//! 2×2 conditional covariance of `(s_t, ṡ_t)` is shared across dimensions and
//! only the conditional means differ.

use std::io::{self, Write};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::GramBundle;
use crate::points::Points;

/// Eigenvalues of a conditional covariance below this are treated as zero.
/// Anything more negative than `-NEG_EIGEN_TOL` is reported as degenerate.
pub const ZERO_EIGEN_TOL: f64 = 1e-12;
pub const NEG_EIGEN_TOL: f64 = 1e-8;

/// Pinned stream values at `M` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    /// M×d, row `j` is the stream value at `times[j]`.
    pub values: Points,
    pub covariate: Option<Vec<f64>>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Points) -> Result<Self> {
        let obs = ObservationSet {
            times,
            values,
            covariate: None,
        };
        obs.validate()?;
        Ok(obs)
    }

    /// Two endpoints at t = 0 and t = 1.
    pub fn endpoints(x0: &[f64], x1: &[f64]) -> Result<Self> {
        ObservationSet::new(vec![0.0, 1.0], Points::from_rows(&[x0, x1])?)
    }

    pub fn with_covariate(mut self, c: Vec<f64>) -> Self {
        self.covariate = Some(c);
        self
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn validate(&self) -> Result<()> {
        crate::kernels::check_obs_times(&self.times)?;
        if self.values.len() != self.times.len() {
            return Err(Error::SizeMismatch {
                left: self.values.len(),
                right: self.times.len(),
            });
        }
        if !self.values.is_finite() {
            return Err(Error::config("observation values must be finite"));
        }
        Ok(())
    }
}

/// Prior mean of the auxiliary stream GP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanFunction {
    #[default]
    Zero,
}

impl MeanFunction {
    /// `(ξ(t), ξ̇(t))` for one dimension.
    pub fn eval(&self, _dim: usize, _t: f64) -> (f64, f64) {
        match self {
            MeanFunction::Zero => (0.0, 0.0),
        }
    }
}

/// Gaussian law of `(s_t, ṡ_t)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    /// `[mean_s, mean_sdot]` per dimension.
    pub mean: Vec<[f64; 2]>,
    /// Shared 2×2 covariance.
    pub cov: [[f64; 2]; 2],
}

/// Dimension-independent part of the conditional law at time `t`:
/// the 2×M weight matrix `Σ_{t,obs} Σ_obs⁻¹` and the 2×2 covariance.
#[derive(Debug, Clone)]
pub struct ConditionalWeights {
    pub t: f64,
    weights: DMatrix<f64>,
    cov: [[f64; 2]; 2],
}

impl ConditionalWeights {
    pub fn at(bundle: &GramBundle, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain { t });
        }
        let cross = bundle.cross(t);
        // Σ_obs⁻¹ Σ_{t,obs}ᵀ, M×2
        let solved = bundle.solve(&cross.transpose());
        let reduction = &cross * &solved;
        let p = bundle.point(t);
        let c00 = p[0][0] - reduction[(0, 0)];
        let c11 = p[1][1] - reduction[(1, 1)];
        let c01 = 0.5 * ((p[0][1] - reduction[(0, 1)]) + (p[1][0] - reduction[(1, 0)]));
        Ok(ConditionalWeights {
            t,
            weights: solved.transpose(),
            cov: [[c00, c01], [c01, c11]],
        })
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    /// Conditional `(mean_s, mean_sdot)` for one dimension given that
    /// dimension's observed values.
    pub fn mean_for(&self, mean: MeanFunction, dim: usize, times: &[f64], column: &[f64]) -> [f64; 2] {
        let (xi, xi_dot) = mean.eval(dim, self.t);
        let mut ms = xi;
        let mut md = xi_dot;
        for (j, (&x, &tj)) in column.iter().zip(times).enumerate() {
            let resid = x - mean.eval(dim, tj).0;
            ms += self.weights[(0, j)] * resid;
            md += self.weights[(1, j)] * resid;
        }
        [ms, md]
    }

    /// Apply the weights to every dimension of an observation set.
    pub fn apply(&self, mean: MeanFunction, obs: &ObservationSet) -> ConditionalGaussian {
        let m = obs.times.len();
        let d = obs.dim();
        let mut column = vec![0.0; m];
        let mean_vec = (0..d)
            .map(|i| {
                for (j, c) in column.iter_mut().enumerate() {
                    *c = obs.values.row(j)[i];
                }
                self.mean_for(mean, i, &obs.times, &column)
            })
            .collect();
        ConditionalGaussian {
            mean: mean_vec,
            cov: self.cov,
        }
    }
}

/// Condition the stream GP on `obs` and return the law of `(s_t, ṡ_t)`.
pub fn condition(
    bundle: &GramBundle,
    mean: MeanFunction,
    obs: &ObservationSet,
    t: f64,
) -> Result<ConditionalGaussian> {
    if bundle.obs_times() != obs.times.as_slice() {
        return Err(Error::config(format!(
            "bundle built on times {:?} but observations at {:?}",
            bundle.obs_times(),
            obs.times
        )));
    }
    if obs.values.len() != obs.times.len() {
        return Err(Error::SizeMismatch {
            left: obs.values.len(),
            right: obs.times.len(),
        });
    }
    Ok(ConditionalWeights::at(bundle, t)?.apply(mean, obs))
}

/// Square-root factor `A` with `A Aᵀ = cov`, after clipping tiny eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovFactor([[f64; 2]; 2]);

impl CovFactor {
    pub fn new(cov: [[f64; 2]; 2]) -> Result<Self> {
        let sym = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        if !sym.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite covariance {cov:?}")));
        }
        // Exact zero short-circuit keeps degenerate laws bit-exact.
        if sym.iter().all(|v| *v == 0.0) {
            return Ok(CovFactor([[0.0; 2]; 2]));
        }
        let eig = SymmetricEigen::new(sym);
        let mut a = [[0.0; 2]; 2];
        for k in 0..2 {
            let lambda = eig.eigenvalues[k];
            if lambda < -NEG_EIGEN_TOL {
                return Err(Error::Degenerate(format!(
                    "covariance {cov:?} has eigenvalue {lambda}"
                )));
            }
            let root = if lambda < ZERO_EIGEN_TOL { 0.0 } else { lambda.sqrt() };
            for r in 0..2 {
                a[r][k] = eig.eigenvectors[(r, k)] * root;
            }
        }
        Ok(CovFactor(a))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|v| *v == 0.0)
    }

    /// `mean + A z` for a 2-vector of standard normals.
    #[inline]
    pub fn apply(&self, mean: [f64; 2], z: [f64; 2]) -> [f64; 2] {
        let a = &self.0;
        [
            mean[0] + a[0][0] * z[0] + a[0][1] * z[1],
            mean[1] + a[1][0] * z[0] + a[1][1] * z[1],
        ]
    }
}

/// Draw `(s, ṡ)` from a conditional Gaussian.
///
/// Always consumes exactly `2 d` standard normals so that rng streams stay
/// aligned regardless of the covariance.
pub fn sample_point<R: rand::Rng + ?Sized>(
    cg: &ConditionalGaussian,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let factor = CovFactor::new(cg.cov)?;
    let d = cg.mean.len();
    let mut s = Vec::with_capacity(d);
    let mut sdot = Vec::with_capacity(d);
    for m in &cg.mean {
        let z = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let [a, b] = factor.apply(*m, z);
        s.push(a);
        sdot.push(b);
    }
    Ok((s, sdot))
}

/// One training target: position and velocity of a stream at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub t: f64,
    pub s: Vec<f64>,
    pub sdot: Vec<f64>,
    pub covariate: Option<Vec<f64>>,
}

/// How streams between observations are modeled.
#[derive(Debug, Clone)]
pub enum StreamModel {
    /// Straight line between two endpoints with constant velocity.
    /// Identical to conditioning a linear-kernel GP on `{0, 1}`.
    Interpolant,
    /// Conditional GP on the bundle's observation times.
    Gp { bundle: GramBundle, mean: MeanFunction },
}

impl StreamModel {
    pub fn gp(bundle: GramBundle) -> Self {
        StreamModel::Gp {
            bundle,
            mean: MeanFunction::Zero,
        }
    }

    /// Draw `(s_t, ṡ_t)` for one stream pinned at `rows` (one d-vector per
    /// observation time). Writes into `s` and `sdot`.
    pub fn draw_into<R: rand::Rng + ?Sized>(
        &self,
        t: f64,
        rows: &[&[f64]],
        rng: &mut R,
        s: &mut [f64],
        sdot: &mut [f64],
    ) -> Result<()> {
        match self {
            StreamModel::Interpolant => {
                if rows.len() != 2 {
                    return Err(Error::config(format!(
                        "straight interpolant needs two endpoints, got {}",
                        rows.len()
                    )));
                }
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Domain { t });
                }
                let (x0, x1) = (rows[0], rows[1]);
                for i in 0..s.len() {
                    s[i] = (1.0 - t) * x0[i] + t * x1[i];
                    sdot[i] = x1[i] - x0[i];
                }
                Ok(())
            }
            StreamModel::Gp { bundle, mean } => {
                let times = bundle.obs_times();
                if rows.len() != times.len() {
                    return Err(Error::SizeMismatch {
                        left: rows.len(),
                        right: times.len(),
                    });
                }
                let w = ConditionalWeights::at(bundle, t)?;
                let factor = CovFactor::new(w.cov())?;
                let mut column = vec![0.0; rows.len()];
                for i in 0..s.len() {
                    for (c, r) in column.iter_mut().zip(rows) {
                        *c = r[i];
                    }
                    let m = w.mean_for(*mean, i, times, &column);
                    let z = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    let [a, b] = factor.apply(m, z);
                    s[i] = a;
                    sdot[i] = b;
                }
                Ok(())
            }
        }
    }
}

/// One row of stream envelope statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStatsRow {
    pub t: f64,
    pub dim: usize,
    pub mean_s: f64,
    pub sd_s: f64,
    pub mean_sdot: f64,
    pub sd_sdot: f64,
}

/// Evaluate the conditional law on a time grid.
pub fn path_stats(
    bundle: &GramBundle,
    mean: MeanFunction,
    obs: &ObservationSet,
    grid: &[f64],
) -> Result<Vec<PathStatsRow>> {
    let mut out = Vec::with_capacity(grid.len() * obs.dim());
    for &t in grid {
        let cg = condition(bundle, mean, obs, t)?;
        let sd_s = cg.cov[0][0].max(0.0).sqrt();
        let sd_sdot = cg.cov[1][1].max(0.0).sqrt();
        for (dim, m) in cg.mean.iter().enumerate() {
            out.push(PathStatsRow {
                t,
                dim,
                mean_s: m[0],
                sd_s,
                mean_sdot: m[1],
                sd_sdot,
            });
        }
    }
    Ok(out)
}

/// Write path statistics as CSV with header `t,dim,mean_s,sd_s,mean_sdot,sd_sdot`.
pub fn write_path_stats_csv<W: Write>(rows: &[PathStatsRow], mut w: W) -> io::Result<()> {
    writeln!(w, "t,dim,mean_s,sd_s,mean_sdot,sd_sdot")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.t, r.dim, r.mean_s, r.sd_s, r.mean_sdot, r.sd_sdot
        )?;
    }
    Ok(())
}
