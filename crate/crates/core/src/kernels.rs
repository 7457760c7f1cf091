//! Covariance kernels for the joint (stream, velocity) Gaussian process.
//!
//! A kernel `c11(t, t')` describes the covariance of stream positions. Its
//! time derivatives give the remaining blocks of the joint process:
//!
//! * `c12 = ∂c11/∂t'` (position at `t` vs. velocity at `t'`)
//! * `c21 = ∂c11/∂t`  (velocity at `t` vs. position at `t'`)
//! * `c22 = ∂²c11/∂t∂t'` (velocity vs. velocity)

use std::fmt;
use std::ops::Add;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default diagonal jitter schedule tried in order when factorizing Gram matrices.
pub const DEFAULT_JITTER_SCHEDULE: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// A differentiable covariance kernel over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `alpha * exp(-(t - t')² / (2 l²))`
    #[serde(rename = "se")]
    SquaredExponential { alpha: f64, l: f64 },
    /// `sigma_a² + sigma_b² (t - 1)(t' - 1)`
    Linear { sigma_a: f64, sigma_b: f64 },
    /// `alpha * t * t'`
    #[serde(rename = "dot_increasing")]
    DotProductIncreasing { alpha: f64 },
    /// `alpha * (t - 1)(t' - 1)`
    #[serde(rename = "dot_decreasing")]
    DotProductDecreasing { alpha: f64 },
    Sum { members: Vec<KernelSpec> },
    /// White noise on positions. Only valid inside a `Sum`.
    Nugget { sigma_w: f64 },
}

/// The four covariance blocks at a pair of times.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Blocks {
    pub c11: f64,
    pub c12: f64,
    pub c21: f64,
    pub c22: f64,
}

impl Add for Blocks {
    type Output = Blocks;

    fn add(self, o: Blocks) -> Blocks {
        Blocks {
            c11: self.c11 + o.c11,
            c12: self.c12 + o.c12,
            c21: self.c21 + o.c21,
            c22: self.c22 + o.c22,
        }
    }
}

impl KernelSpec {
    pub fn se(alpha: f64, l: f64) -> Self {
        KernelSpec::SquaredExponential { alpha, l }
    }

    pub fn linear(sigma_a: f64, sigma_b: f64) -> Self {
        KernelSpec::Linear { sigma_a, sigma_b }
    }

    /// Check hyper-parameter constraints. Nugget is accepted only as a `Sum` member.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, in_sum: bool) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be non-negative, got {v}")))
            }
        };
        match self {
            KernelSpec::SquaredExponential { alpha, l } => {
                positive("se.alpha", *alpha)?;
                positive("se.l", *l)
            }
            KernelSpec::Linear { sigma_a, sigma_b } => {
                non_negative("linear.sigma_a", *sigma_a)?;
                positive("linear.sigma_b", *sigma_b)
            }
            KernelSpec::DotProductIncreasing { alpha } => positive("dot_increasing.alpha", *alpha),
            KernelSpec::DotProductDecreasing { alpha } => positive("dot_decreasing.alpha", *alpha),
            KernelSpec::Sum { members } => {
                if members.is_empty() {
                    return Err(Error::config("sum kernel needs at least one member"));
                }
                members.iter().try_for_each(|m| m.validate_inner(true))
            }
            KernelSpec::Nugget { sigma_w } => {
                if !in_sum {
                    return Err(Error::config("nugget is only allowed as a sum member"));
                }
                non_negative("nugget.sigma_w", *sigma_w)
            }
        }
    }

    /// True when the kernel (or any member) carries a white-noise term.
    pub fn has_nugget(&self) -> bool {
        match self {
            KernelSpec::Nugget { .. } => true,
            KernelSpec::Sum { members } => members.iter().any(|m| m.has_nugget()),
            _ => false,
        }
    }

    /// Evaluate all four blocks at `(t, t2)`. No validation; see [`eval_blocks`].
    pub fn blocks(&self, t: f64, t2: f64) -> Blocks {
        match *self {
            KernelSpec::SquaredExponential { alpha, l } => {
                let r = t - t2;
                let l2 = l * l;
                let e = alpha * (-(r * r) / (2.0 * l2)).exp();
                let c12 = r / l2 * e;
                Blocks {
                    c11: e,
                    c12,
                    c21: -c12,
                    c22: (l2 - r * r) / (l2 * l2) * e,
                }
            }
            KernelSpec::Linear { sigma_a, sigma_b } => {
                let b2 = sigma_b * sigma_b;
                Blocks {
                    c11: sigma_a * sigma_a + b2 * (t - 1.0) * (t2 - 1.0),
                    c12: b2 * (t - 1.0),
                    c21: b2 * (t2 - 1.0),
                    c22: b2,
                }
            }
            KernelSpec::DotProductIncreasing { alpha } => Blocks {
                c11: alpha * t * t2,
                c12: alpha * t,
                c21: alpha * t2,
                c22: alpha,
            },
            KernelSpec::DotProductDecreasing { alpha } => Blocks {
                c11: alpha * (t - 1.0) * (t2 - 1.0),
                c12: alpha * (t - 1.0),
                c21: alpha * (t2 - 1.0),
                c22: alpha,
            },
            KernelSpec::Sum { ref members } => members
                .iter()
                .fold(Blocks::default(), |acc, m| acc + m.blocks(t, t2)),
            KernelSpec::Nugget { sigma_w } => Blocks {
                #[allow(clippy::float_cmp)]
                c11: if t == t2 { sigma_w * sigma_w } else { 0.0 },
                ..Blocks::default()
            },
        }
    }

    #[inline]
    pub fn c11(&self, t: f64, t2: f64) -> f64 {
        self.blocks(t, t2).c11
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::SquaredExponential { alpha, l } => write!(f, "se(alpha={alpha}, l={l})"),
            KernelSpec::Linear { sigma_a, sigma_b } => {
                write!(f, "linear(sigma_a={sigma_a}, sigma_b={sigma_b})")
            }
            KernelSpec::DotProductIncreasing { alpha } => write!(f, "dot_increasing(alpha={alpha})"),
            KernelSpec::DotProductDecreasing { alpha } => write!(f, "dot_decreasing(alpha={alpha})"),
            KernelSpec::Sum { members } => {
                write!(f, "sum(")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{m}")?;
                }
                write!(f, ")")
            }
            KernelSpec::Nugget { sigma_w } => write!(f, "nugget(sigma_w={sigma_w})"),
        }
    }
}

/// Evaluate `(c11, c12, c21, c22)` after validating the kernel.
pub fn eval_blocks(kernel: &KernelSpec, t: f64, t2: f64) -> Result<Blocks> {
    kernel.validate()?;
    if !t.is_finite() || !t2.is_finite() {
        return Err(Error::config(format!("non-finite time pair ({t}, {t2})")));
    }
    Ok(kernel.blocks(t, t2))
}

/// Gram matrix over observation times together with its Cholesky factor.
///
/// Built once per (kernel, observation times) and shared by every batch row
/// and every dimension.
#[derive(Debug, Clone)]
pub struct GramBundle {
    kernel: KernelSpec,
    obs_times: Vec<f64>,
    k_obs: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramBundle {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn obs_times(&self) -> &[f64] {
        &self.obs_times
    }

    pub fn len(&self) -> usize {
        self.obs_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_times.is_empty()
    }

    /// Gram matrix without jitter.
    pub fn k_obs(&self) -> &DMatrix<f64> {
        &self.k_obs
    }

    /// Lower-triangular factor of `k_obs + jitter * I`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Cross block `[c11(t, t_j); c21(t, t_j)]`, shape 2×M.
    pub fn cross(&self, t: f64) -> DMatrix<f64> {
        let m = self.obs_times.len();
        let mut out = DMatrix::zeros(2, m);
        for (j, &tj) in self.obs_times.iter().enumerate() {
            let b = self.kernel.blocks(t, tj);
            out[(0, j)] = b.c11;
            out[(1, j)] = b.c21;
        }
        out
    }

    /// Point block `[[c11, c12], [c21, c22]]` at `(t, t)`.
    pub fn point(&self, t: f64) -> [[f64; 2]; 2] {
        let b = self.kernel.blocks(t, t);
        [[b.c11, b.c12], [b.c21, b.c22]]
    }

    /// Solve `(k_obs + jitter I) X = rhs` with the cached factor.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// Assemble and factorize the observation Gram matrix.
///
/// Observation times must be strictly increasing, start at 0 and end at 1.
/// Jitter values are tried in the given order; the first that factorizes wins.
pub fn build_gram(
    kernel: &KernelSpec,
    obs_times: &[f64],
    jitter_schedule: &[f64],
) -> Result<GramBundle> {
    kernel.validate()?;
    check_obs_times(obs_times)?;
    if jitter_schedule.is_empty() {
        return Err(Error::config("jitter schedule is empty"));
    }
    if jitter_schedule.iter().any(|j| !j.is_finite() || *j < 0.0) {
        return Err(Error::config("jitter values must be finite and non-negative"));
    }
    if jitter_schedule.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("jitter schedule must be non-decreasing"));
    }

    let m = obs_times.len();
    let k_obs = DMatrix::from_fn(m, m, |i, j| kernel.c11(obs_times[i], obs_times[j]));
    for &jitter in jitter_schedule {
        let mut k = k_obs.clone();
        for i in 0..m {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok(GramBundle {
                kernel: kernel.clone(),
                obs_times: obs_times.to_vec(),
                k_obs,
                chol,
                jitter,
            });
        }
    }
    Err(Error::Degenerate(format!(
        "Gram matrix of {kernel} at times {obs_times:?} is not positive definite even with jitter {}",
        jitter_schedule[jitter_schedule.len() - 1]
    )))
}

pub(crate) fn check_obs_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::config(format!(
            "need at least two observation times, got {}",
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::config("observation times must be finite"));
    }
    if times[0] != 0.0 || times[times.len() - 1] != 1.0 {
        return Err(Error::config(format!(
            "observation times must start at 0 and end at 1, got {times:?}"
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!(
            "observation times must be strictly increasing, got {times:?}"
        )));
    }
    Ok(())
}
