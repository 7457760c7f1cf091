//! Training loop: draw coupled observations, sample `(s_t, ṡ_t)` along
//! conditional streams, regress the vector field, take an Adam step.

use std::io::{self, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coupling::{self, Batch, GroupIndex};
use crate::datasets::PointSampler;
use crate::error::{Error, Result};
use crate::gp_stream::StreamModel;
use crate::kernels::{build_gram, KernelSpec, DEFAULT_JITTER_SCHEDULE};
use crate::points::Points;
use crate::rng::{self, streams, Rng};
use crate::vector_field::{adam_step, Activation, AdamConfig, AdamState, Architecture, VectorFieldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    ICfm,
    GpICfm,
    OtCfm,
    GpOtCfm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ICfm,
        Algorithm::GpICfm,
        Algorithm::OtCfm,
        Algorithm::GpOtCfm,
    ];

    pub fn uses_gp(self) -> bool {
        matches!(self, Algorithm::GpICfm | Algorithm::GpOtCfm)
    }

    pub fn uses_ot(self) -> bool {
        matches!(self, Algorithm::OtCfm | Algorithm::GpOtCfm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ICfm => "i_cfm",
            Algorithm::GpICfm => "gp_i_cfm",
            Algorithm::OtCfm => "ot_cfm",
            Algorithm::GpOtCfm => "gp_ot_cfm",
        }
    }
}

/// Variance profile added to the SE stream kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceScheme {
    #[default]
    None,
    Constant { sigma_w: f64 },
    Increasing { alpha: f64 },
    Decreasing { alpha: f64 },
}

impl VarianceScheme {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceScheme::None => "none",
            VarianceScheme::Constant { .. } => "constant",
            VarianceScheme::Increasing { .. } => "increasing",
            VarianceScheme::Decreasing { .. } => "decreasing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    #[default]
    Off,
    /// Feed the stream's t = 0 value to the field as `c`.
    X0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeParams {
    pub alpha: f64,
    pub l: f64,
}

impl Default for SeParams {
    fn default() -> Self {
        SeParams { alpha: 1.0, l: 0.3 }
    }
}

/// Build the stream kernel for a variance scheme on top of an SE base.
pub fn make_scheme_kernel(base: SeParams, scheme: VarianceScheme) -> KernelSpec {
    let se = KernelSpec::se(base.alpha, base.l);
    let extra = match scheme {
        VarianceScheme::None => return se,
        VarianceScheme::Constant { sigma_w } => KernelSpec::Nugget { sigma_w },
        VarianceScheme::Increasing { alpha } => KernelSpec::DotProductIncreasing { alpha },
        VarianceScheme::Decreasing { alpha } => KernelSpec::DotProductDecreasing { alpha },
    };
    KernelSpec::Sum {
        members: vec![se, extra],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub scheme: VarianceScheme,
    pub se: SeParams,
    /// Replaces the scheme kernel for GP algorithms when set.
    pub kernel: Option<KernelSpec>,
    /// Position noise of the straight-line path for `i_cfm` / `ot_cfm`.
    pub sigma: f64,
    pub covariate: CovariateMode,
    pub batch_size: usize,
    pub iterations: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adam: AdamConfig,
    /// Draw a single `t` per batch instead of one per row.
    pub t_per_batch: bool,
    /// OT minibatch size; defaults to `batch_size`.
    pub ot_batch_size: Option<usize>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::ICfm,
            scheme: VarianceScheme::None,
            se: SeParams::default(),
            kernel: None,
            sigma: 0.0,
            covariate: CovariateMode::Off,
            batch_size: 128,
            iterations: 5000,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            adam: AdamConfig::default(),
            t_per_batch: false,
            ot_batch_size: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be finite and non-negative"));
        }
        if let Some(n) = self.ot_batch_size {
            if n == 0 || n > self.batch_size {
                return Err(Error::config(
                    "ot_batch_size must be between 1 and batch_size",
                ));
            }
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::config("adam needs lr > 0, betas in [0, 1), eps > 0"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be at least 1"));
        }
        self.stream_kernel().map_or(Ok(()), |k| k.validate())
    }

    /// Kernel used for streams, or `None` for the exact straight line.
    pub fn stream_kernel(&self) -> Option<KernelSpec> {
        if self.algorithm.uses_gp() {
            Some(
                self.kernel
                    .clone()
                    .unwrap_or_else(|| make_scheme_kernel(self.se, self.scheme)),
            )
        } else if self.sigma > 0.0 {
            Some(KernelSpec::Sum {
                members: vec![
                    KernelSpec::linear(1.0, 1.0),
                    KernelSpec::Nugget { sigma_w: self.sigma },
                ],
            })
        } else {
            None
        }
    }

    fn stream_model(&self, obs_times: &[f64]) -> Result<StreamModel> {
        match self.stream_kernel() {
            None if obs_times == [0.0, 1.0] => Ok(StreamModel::Interpolant),
            None => Err(Error::config(format!(
                "straight-line streams need observation times [0, 1], got {obs_times:?}; \
                 use a gp algorithm for more observations"
            ))),
            Some(k) => Ok(StreamModel::gp(build_gram(&k, obs_times, &DEFAULT_JITTER_SCHEDULE)?)),
        }
    }

    fn architecture(&self, dim: usize) -> Architecture {
        Architecture {
            state_dim: dim,
            covariate_dim: match self.covariate {
                CovariateMode::Off => 0,
                CovariateMode::X0 => dim,
            },
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }
}

/// Loss recorded every `log_every` iterations (and at the last one).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub entries: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// CSV `iter,loss`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iter,loss")?;
        for (i, l) in &self.entries {
            writeln!(w, "{i},{l:.17e}")?;
        }
        Ok(())
    }
}

/// Times for one batch: independent per row, or one shared draw.
pub fn draw_times(rng: &mut Rng, n: usize, per_batch: bool) -> Vec<f64> {
    if per_batch {
        let t: f64 = rng.gen();
        vec![t; n]
    } else {
        (0..n).map(|_| rng.gen()).collect()
    }
}

enum Source<'a> {
    Pair {
        source: &'a dyn PointSampler,
        target: &'a Points,
    },
    Grouped {
        slices: &'a [Points],
        index: GroupIndex,
        noise: Option<&'a dyn PointSampler>,
    },
}

/// Train on endpoint pairs: `x₀` drawn from `source`, `x₁` resampled from
/// `target` rows.
pub fn train(
    config: &TrainConfig,
    source: &dyn PointSampler,
    target: &Points,
) -> Result<(VectorFieldModel, LossTrace)> {
    config.validate()?;
    if target.is_empty() {
        return Err(Error::Empty("target set"));
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: source.dim(),
        });
    }
    run(config, Source::Pair { source, target }, &[0.0, 1.0], target.dim())
}

/// Train one model across `M` observation times from subject-aligned slices.
///
/// `times[m]` is the time of `slices[m]`. When `noise_source` is set its draws
/// are pinned at t = 0 and `times` must not contain 0. With the covariate
/// mode `x0` the t = 0 value of each tuple is fed to the field.
pub fn train_multimarginal(
    config: &TrainConfig,
    slices: &[Points],
    group_ids: &[Vec<usize>],
    times: &[f64],
    noise_source: Option<&dyn PointSampler>,
) -> Result<(VectorFieldModel, LossTrace)> {
    config.validate()?;
    if slices.is_empty() {
        return Err(Error::Empty("slices"));
    }
    if times.len() != slices.len() {
        return Err(Error::SizeMismatch {
            left: times.len(),
            right: slices.len(),
        });
    }
    let mut obs_times = Vec::with_capacity(times.len() + 1);
    if noise_source.is_some() {
        obs_times.push(0.0);
    }
    obs_times.extend_from_slice(times);
    crate::kernels::check_obs_times(&obs_times)?;
    if config.algorithm.uses_ot() && obs_times.len() > 2 {
        return Err(Error::config(
            "OT coupling is defined for two observation times only",
        ));
    }
    let index = GroupIndex::new(slices, group_ids)?;
    let dim = slices[0].dim();
    run(
        config,
        Source::Grouped {
            slices,
            index,
            noise: noise_source,
        },
        &obs_times,
        dim,
    )
}

fn run(
    config: &TrainConfig,
    data: Source<'_>,
    obs_times: &[f64],
    dim: usize,
) -> Result<(VectorFieldModel, LossTrace)> {
    let arch = config.architecture(dim);
    let mut model = VectorFieldModel::init(arch.clone(), &mut rng::stream(config.seed, streams::INIT))?;
    let stream = config.stream_model(obs_times)?;

    let mut batch_rng = rng::stream(config.seed, streams::BATCH);
    let mut time_rng = rng::stream(config.seed, streams::TIME);
    let mut noise_rng = rng::stream(config.seed, streams::STREAM_NOISE);

    let n = config.batch_size;
    let mut adam = AdamState::new(config.adam, model.params().len());
    let mut grad = vec![0.0; model.params().len()];
    let mut scratch = model.scratch();
    let mut inputs = Points::zeros(n, arch.input_dim());
    let mut targets = Points::zeros(n, dim);
    let mut trace = LossTrace::default();

    for iter in 0..config.iterations {
        let batch = draw_batch(config, &data, &mut batch_rng)?;
        let mut rows: Vec<&[f64]> = Vec::with_capacity(obs_times.len());
        let ts = draw_times(&mut time_rng, n, config.t_per_batch);
        for (i, &t) in ts.iter().enumerate() {
            rows.clear();
            rows.extend(batch.slices.iter().map(|s| s.row(i)));
            let input = inputs.row_mut(i);
            input[0] = t;
            let (s, c) = input[1..].split_at_mut(dim);
            stream.draw_into(t, &rows, &mut noise_rng, s, targets.row_mut(i))?;
            if config.covariate == CovariateMode::X0 {
                c.copy_from_slice(rows[0]);
            }
        }
        let loss = model
            .loss_and_grad_into(&inputs, &targets, &mut grad, &mut scratch)
            .map_err(|e| e.at_step(iter))?;
        if iter % config.log_every == 0 || iter + 1 == config.iterations {
            trace.entries.push((iter, loss));
        }
        adam_step(&mut adam, model.params_mut(), &grad);
    }
    Ok((model, trace))
}

fn draw_batch(config: &TrainConfig, data: &Source<'_>, rng: &mut Rng) -> Result<Batch> {
    let n = config.batch_size;
    match data {
        Source::Pair { source, target } => {
            let mut batch = coupling::independent_coupling(*source, target, n, rng)?;
            if config.algorithm.uses_ot() {
                let k = config.ot_batch_size.unwrap_or(n);
                let mut perm = Vec::with_capacity(n);
                for start in (0..n).step_by(k) {
                    let idx: Vec<usize> = (start..(start + k).min(n)).collect();
                    let local = coupling::ot_coupling(
                        &batch.source().select(&idx),
                        &batch.target().select(&idx),
                    )?;
                    perm.extend(local.into_iter().map(|j| idx[j]));
                }
                batch.permute_target(&perm);
            }
            Ok(batch)
        }
        Source::Grouped { slices, index, noise } => index.sample(slices, n, *noise, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Empirical, GaussianMixture};
    use crate::gp_stream::{path_stats, MeanFunction, ObservationSet};

    fn point_mass(x: f64) -> Empirical {
        Empirical(Points::from_flat(1, vec![x]).unwrap())
    }

    fn small(algorithm: Algorithm, iterations: usize) -> TrainConfig {
        TrainConfig {
            algorithm,
            iterations,
            batch_size: 32,
            hidden: vec![16, 16],
            log_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scheme_kernels() {
        let se = SeParams { alpha: 1.0, l: 0.3 };
        assert_eq!(make_scheme_kernel(se, VarianceScheme::None), KernelSpec::se(1.0, 0.3));
        let k = make_scheme_kernel(se, VarianceScheme::Increasing { alpha: 2.0 });
        assert_eq!(
            k,
            KernelSpec::Sum {
                members: vec![KernelSpec::se(1.0, 0.3), KernelSpec::DotProductIncreasing { alpha: 2.0 }]
            }
        );
        assert!(make_scheme_kernel(se, VarianceScheme::Constant { sigma_w: 0.1 }).has_nugget());
    }

    fn end_sds(scheme: VarianceScheme) -> (f64, f64) {
        let k = make_scheme_kernel(SeParams { alpha: 0.1, l: 0.5 }, scheme);
        let bundle = build_gram(&k, &[0.0, 1.0], &DEFAULT_JITTER_SCHEDULE).unwrap();
        let obs = ObservationSet::endpoints(&[-1.0], &[1.0]).unwrap();
        let rows = path_stats(&bundle, MeanFunction::Zero, &obs, &[0.05, 0.95]).unwrap();
        (rows[0].sd_s, rows[1].sd_s)
    }

    #[test]
    fn increasing_scheme_widens_late() {
        let (early, late) = end_sds(VarianceScheme::Increasing { alpha: 1.0 });
        assert!(late > early, "{early} {late}");
    }

    #[test]
    fn decreasing_scheme_widens_early() {
        let (early, late) = end_sds(VarianceScheme::Decreasing { alpha: 1.0 });
        assert!(early > late, "{early} {late}");
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let cfg = small(Algorithm::ICfm, 0);
        let (model, trace) = train(&cfg, &point_mass(0.0), &Points::from_flat(1, vec![1.0]).unwrap()).unwrap();
        let init = VectorFieldModel::init(
            cfg.architecture(1),
            &mut rng::stream(cfg.seed, streams::INIT),
        )
        .unwrap();
        assert_eq!(model, init);
        assert!(trace.entries.is_empty());
    }

    #[test]
    fn same_seed_same_parameters() {
        let target = GaussianMixture::two_gaussians().sample(50, &mut rng::stream(1, 0));
        let src = GaussianMixture::standard(2);
        for alg in Algorithm::ALL {
            let cfg = small(alg, 30);
            let a = train(&cfg, &src, &target).unwrap();
            let b = train(&cfg, &src, &target).unwrap();
            assert_eq!(a.0.params(), b.0.params(), "{}", alg.name());
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn linear_kernel_matches_interpolant_loss_sequence() {
        let target = GaussianMixture::two_gaussians().sample(50, &mut rng::stream(2, 0));
        let src = GaussianMixture::standard(2);
        let plain = small(Algorithm::ICfm, 200);
        let gp = TrainConfig {
            algorithm: Algorithm::GpICfm,
            kernel: Some(KernelSpec::linear(1.0, 1.0)),
            ..plain.clone()
        };
        let a = train(&plain, &src, &target).unwrap().1.losses();
        let b = train(&gp, &src, &target).unwrap().1.losses();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn point_masses_learn_unit_velocity() {
        let cfg = TrainConfig {
            iterations: 2000,
            ..small(Algorithm::ICfm, 0)
        };
        let (model, _) = train(&cfg, &point_mass(0.0), &Points::from_flat(1, vec![1.0]).unwrap()).unwrap();
        let mut x = 0.0;
        let steps = 100;
        for k in 0..steps {
            let t = k as f64 / steps as f64;
            let v = model.forward(t, &[t], None).unwrap()[0];
            assert!((v - 1.0).abs() <= 0.05, "t={t}: {v}");
            x += model.forward(t, &[x], None).unwrap()[0] / steps as f64;
        }
        assert!((x - 1.0).abs() <= 0.05, "{x}");
    }

    #[test]
    fn per_row_times_are_uniform() {
        let mut r = rng::stream(3, streams::TIME);
        let mut ts = draw_times(&mut r, 100_000, false);
        ts.sort_by(f64::total_cmp);
        let n = ts.len() as f64;
        let d = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| ((i + 1) as f64 / n - t).max(t - i as f64 / n))
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn shared_time_per_batch() {
        let ts = draw_times(&mut rng::stream(0, 0), 8, true);
        assert!(ts.iter().all(|&t| t == ts[0]));
    }

    #[test]
    fn smoothed_loss_decreases() {
        let target = GaussianMixture::two_gaussians().sample(100, &mut rng::stream(4, 0));
        let cfg = small(Algorithm::ICfm, 3000);
        let losses = train(&cfg, &GaussianMixture::standard(2), &target).unwrap().1.losses();
        let first: f64 = losses[..500].iter().sum::<f64>() / 500.0;
        let last: f64 = losses[losses.len() - 500..].iter().sum::<f64>() / 500.0;
        assert!(last <= first, "{first} -> {last}");
    }

    #[test]
    fn two_slice_multimarginal_equals_pair_training() {
        let target = GaussianMixture::two_gaussians().sample(40, &mut rng::stream(5, 0));
        let src = GaussianMixture::standard(2);
        let cfg = small(Algorithm::GpICfm, 50);
        let a = train(&cfg, &src, &target).unwrap();
        let groups = vec![(0..target.len()).collect::<Vec<_>>()];
        let b = train_multimarginal(&cfg, std::slice::from_ref(&target), &groups, &[1.0], Some(&src)).unwrap();
        assert_eq!(a.0.params(), b.0.params());
    }

    #[test]
    fn ot_rejected_for_many_slices() {
        let s = Points::from_flat(1, vec![0.0, 1.0]).unwrap();
        let slices = vec![s.clone(), s.clone(), s];
        let groups = vec![vec![0, 1]; 3];
        let err = train_multimarginal(&small(Algorithm::OtCfm, 1), &slices, &groups, &[0.0, 0.5, 1.0], None)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            algorithm: Algorithm::GpICfm,
            se: SeParams { alpha: -1.0, l: 0.3 },
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
