//! Multi-seed benchmarks with paired seeds.
//!
//! Every run of a given seed sees the same training data, test data and
//! generation source, whatever the arm. Runs are independent and execute on
//! a rayon pool.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use streamflow::datasets::{self, DatasetSpec, DatasetVariant, Empirical, GaussianMixture, PointSampler, SliceLayout};
use streamflow::eval::{self, RunMetrics, SummaryRow};
use streamflow::ode::{self, IntegratorSpec};
use streamflow::rng::{self, streams};
use streamflow::trainer::{self, Algorithm, CovariateMode, TrainConfig, VarianceScheme};
use streamflow::{Error, Points, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Four algorithms, standard Gaussian to 2-Gaussian.
    Table1,
    /// GP-I-CFM variance schemes on the same task.
    Table2,
    /// Variance schemes, 2-Gaussian to 2-Gaussian with finite samples at both ends.
    Table4,
    /// Covariate on/off on crossing slices.
    Crossing,
    /// One multi-marginal model vs a two-stage I-CFM pipeline on paired slices.
    Smoothpath,
    /// Four algorithms, 2-Gaussian to 3-Gaussian.
    Mixture3,
}

impl Benchmark {
    pub const ALL: [Benchmark; 6] = [
        Benchmark::Table1,
        Benchmark::Table2,
        Benchmark::Table4,
        Benchmark::Crossing,
        Benchmark::Smoothpath,
        Benchmark::Mixture3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Table1 => "table1",
            Benchmark::Table2 => "table2",
            Benchmark::Table4 => "table4",
            Benchmark::Crossing => "crossing",
            Benchmark::Smoothpath => "smoothpath",
            Benchmark::Mixture3 => "mixture3",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Benchmark::ALL.iter().map(|b| b.name()).collect();
                format!("unknown benchmark `{s}`; expected one of {}", names.join(", "))
            })
    }
}

/// Strength of each variance scheme in the scheme benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeStrengths {
    pub constant_sigma_w: f64,
    pub increasing_alpha: f64,
    pub decreasing_alpha: f64,
}

impl Default for SchemeStrengths {
    fn default() -> Self {
        SchemeStrengths {
            constant_sigma_w: 0.1,
            increasing_alpha: 0.1,
            decreasing_alpha: 0.1,
        }
    }
}

impl SchemeStrengths {
    pub fn all(&self) -> [VarianceScheme; 4] {
        [
            VarianceScheme::None,
            VarianceScheme::Constant {
                sigma_w: self.constant_sigma_w,
            },
            VarianceScheme::Increasing {
                alpha: self.increasing_alpha,
            },
            VarianceScheme::Decreasing {
                alpha: self.decreasing_alpha,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Base training settings; algorithm, scheme, covariate and seed are set per run.
    pub train: TrainConfig,
    pub integrator: IntegratorSpec,
    /// Training samples per slice.
    pub n_train: usize,
    /// Generated and held-out points compared by W2.
    pub n_eval: usize,
    pub schemes: SchemeStrengths,
    pub crossing: SliceLayout,
    pub paired: SliceLayout,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train: TrainConfig::default(),
            integrator: IntegratorSpec::default(),
            n_train: 100,
            n_eval: 1000,
            schemes: SchemeStrengths::default(),
            crossing: SliceLayout::crossing_default(),
            paired: SliceLayout::paired_v_default(),
        }
    }
}

/// One configuration compared within a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub algorithm: Algorithm,
    pub scheme: VarianceScheme,
    pub covariate: CovariateMode,
}

impl Arm {
    fn new(label: impl Into<String>, algorithm: Algorithm) -> Self {
        Arm {
            label: label.into(),
            algorithm,
            scheme: VarianceScheme::None,
            covariate: CovariateMode::Off,
        }
    }

    fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            scheme: self.scheme,
            covariate: self.covariate,
            seed,
            ..base.clone()
        }
    }
}

pub fn arms(bench: Benchmark, cfg: &BenchConfig) -> Vec<Arm> {
    let algorithms = || Algorithm::ALL.iter().map(|&a| Arm::new(a.name(), a)).collect();
    let schemes = || {
        cfg.schemes
            .all()
            .into_iter()
            .map(|s| Arm {
                scheme: s,
                ..Arm::new(format!("gp_i_cfm/{}", s.name()), Algorithm::GpICfm)
            })
            .collect()
    };
    match bench {
        Benchmark::Table1 | Benchmark::Mixture3 => algorithms(),
        Benchmark::Table2 | Benchmark::Table4 => schemes(),
        Benchmark::Crossing => vec![
            Arm::new("gp_i_cfm", Algorithm::GpICfm),
            Arm {
                covariate: CovariateMode::X0,
                ..Arm::new("gp_i_cfm+x0", Algorithm::GpICfm)
            },
        ],
        Benchmark::Smoothpath => vec![
            Arm::new("gp_i_cfm", Algorithm::GpICfm),
            Arm::new("i_cfm_two_stage", Algorithm::ICfm),
        ],
    }
}

/// Metrics of one arm × seed, one row per evaluated stop.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub arm: String,
    pub seed: u64,
    pub stops: Vec<f64>,
    pub metrics: Vec<RunMetrics>,
    /// Hash of the held-out data and generation source used by the run.
    pub data_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub arm: String,
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl BenchReport {
    pub fn metrics(&self) -> Vec<RunMetrics> {
        self.records.iter().flat_map(|r| r.metrics.iter().cloned()).collect()
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        eval::summarize(&self.metrics(), |m| m.algorithm.clone())
    }

    /// W2 values of one metric label, ordered by seed.
    pub fn series(&self, label: &str) -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = self
            .metrics()
            .into_iter()
            .filter(|m| m.algorithm == label)
            .map(|m| (m.seed, m.w2))
            .collect();
        v.sort_by_key(|x| x.0);
        v
    }
}

/// Label of a metric row: the arm, suffixed with the stop when a run
/// evaluates several times.
pub fn metric_label(arm: &str, stop: f64, multi: bool) -> String {
    if multi {
        format!("{arm}@{stop}")
    } else {
        arm.to_string()
    }
}

/// Run every arm for every seed on a pool of `jobs` threads.
pub fn run_bench(bench: Benchmark, cfg: &BenchConfig, seeds: &[u64], jobs: usize) -> Result<BenchReport> {
    cfg.train.validate()?;
    cfg.integrator.validate()?;
    if cfg.n_train == 0 || cfg.n_eval == 0 {
        return Err(Error::Config("n_train and n_eval must be at least 1".into()));
    }
    let grid: Vec<(Arm, u64)> = seeds
        .iter()
        .flat_map(|&s| arms(bench, cfg).into_iter().map(move |a| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        grid.par_iter()
            .map(|(arm, seed)| (arm.label.clone(), *seed, run_one(bench, cfg, arm, *seed)))
            .collect()
    });
    let mut report = BenchReport::default();
    for (arm, seed, r) in results {
        match r {
            Ok(rec) => report.records.push(rec),
            Err(error) => report.failures.push(RunFailure { arm, seed, error }),
        }
    }
    Ok(report)
}

fn hash_points(h: &mut Sha256, pts: &Points) {
    for v in pts.as_slice() {
        h.update(v.to_le_bytes());
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn mixture_data(target: &GaussianMixture, cfg: &BenchConfig, seed: u64) -> Result<datasets::Dataset> {
    datasets::generate(&DatasetSpec {
        variant: DatasetVariant::GaussianMixture(target.clone()),
        n_train: cfg.n_train,
        n_test: cfg.n_eval,
        seed,
    })
}

/// Train and evaluate one arm on one seed.
pub fn run_one(bench: Benchmark, cfg: &BenchConfig, arm: &Arm, seed: u64) -> Result<RunRecord> {
    let tc = arm.train_config(&cfg.train, seed);
    let n = cfg.n_eval;
    let gen_rng = || rng::stream(seed, streams::GENERATE);
    let noise = GaussianMixture::standard(2);
    let mut hasher = Sha256::new();

    // (stops, held-out slices, generated slices, train secs, gen secs)
    let (stops, test, generated, train_s, gen_s) = match bench {
        Benchmark::Table1 | Benchmark::Table2 | Benchmark::Mixture3 => {
            let (source, target): (Box<dyn PointSampler>, GaussianMixture) = match bench {
                Benchmark::Mixture3 => (Box::new(GaussianMixture::two_gaussians()), GaussianMixture::three_gaussians()),
                _ => (Box::new(noise.clone()), GaussianMixture::two_gaussians()),
            };
            let data = mixture_data(&target, cfg, seed)?;
            let x0 = source.sample(n, &mut gen_rng());
            let ((model, _), train_s) = timed(|| trainer::train(&tc, source.as_ref(), &data.train[0]))?;
            let (out, gen_s) = timed(|| ode::generate(&model, &x0, &cfg.integrator, &[1.0], None))?;
            hash_points(&mut hasher, &x0);
            (vec![1.0], vec![data.test[0].clone()], out, train_s, gen_s)
        }
        Benchmark::Table4 => {
            let src_mix = GaussianMixture::two_gaussians();
            let data = mixture_data(&GaussianMixture::two_gaussians_mirrored(), cfg, seed)?;
            let src_train = src_mix.sample(cfg.n_train, &mut rng::stream(seed, streams::SOURCE_TRAIN));
            let x0 = src_mix.sample(n, &mut rng::stream(seed, streams::SOURCE_TEST));
            let source = Empirical(src_train);
            let ((model, _), train_s) = timed(|| trainer::train(&tc, &source, &data.train[0]))?;
            let (out, gen_s) = timed(|| ode::generate(&model, &x0, &cfg.integrator, &[1.0], None))?;
            hash_points(&mut hasher, &x0);
            (vec![1.0], vec![data.test[0].clone()], out, train_s, gen_s)
        }
        Benchmark::Crossing => {
            let data = datasets::generate(&DatasetSpec {
                variant: DatasetVariant::Crossing(cfg.crossing),
                n_train: cfg.n_train,
                n_test: n,
                seed,
            })?;
            let ((model, _), train_s) = timed(|| {
                trainer::train_multimarginal(&tc, &data.train, &data.train_groups(), &data.times, None)
            })?;
            let x0 = &data.test[0];
            let cov = (arm.covariate == CovariateMode::X0).then_some(x0);
            let stops = vec![0.5, 1.0];
            let (out, gen_s) = timed(|| ode::generate(&model, x0, &cfg.integrator, &stops, cov))?;
            hash_points(&mut hasher, x0);
            (stops, data.test[1..].to_vec(), out, train_s, gen_s)
        }
        Benchmark::Smoothpath => {
            let data = datasets::generate(&DatasetSpec {
                variant: DatasetVariant::PairedV(cfg.paired),
                n_train: cfg.n_train,
                n_test: n,
                seed,
            })?;
            let x0 = noise.sample(n, &mut gen_rng());
            let stops = vec![0.5, 1.0];
            let (out, train_s, gen_s) = if arm.algorithm.uses_gp() {
                let ((model, _), train_s) = timed(|| {
                    trainer::train_multimarginal(&tc, &data.train, &data.train_groups(), &data.times, Some(&noise))
                })?;
                let (out, gen_s) = timed(|| ode::generate(&model, &x0, &cfg.integrator, &stops, None))?;
                (out, train_s, gen_s)
            } else {
                // two independent legs, each on a rescaled unit time interval
                let ((first, _), t1) = timed(|| trainer::train(&tc, &noise, &data.train[0]))?;
                let mid = Empirical(data.train[0].clone());
                let ((second, _), t2) = timed(|| trainer::train(&tc, &mid, &data.train[1]))?;
                let (out, gen_s) = timed(|| {
                    let half = ode::generate(&first, &x0, &cfg.integrator, &[1.0], None)?.remove(0);
                    let end = ode::generate(&second, &half, &cfg.integrator, &[1.0], None)?.remove(0);
                    Ok(vec![half, end])
                })?;
                (out, t1 + t2, gen_s)
            };
            hash_points(&mut hasher, &x0);
            (stops, data.test.clone(), out, train_s, gen_s)
        }
    };
    for t in &test {
        hash_points(&mut hasher, t);
    }
    let multi = stops.len() > 1;
    let mut metrics = Vec::with_capacity(stops.len());
    for ((stop, gen), held_out) in stops.iter().zip(&generated).zip(&test) {
        if !gen.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite generated samples at t = {stop}"
            )));
        }
        metrics.push(RunMetrics {
            seed,
            algorithm: metric_label(&arm.label, *stop, multi),
            scheme: arm.scheme.name().to_string(),
            w2: eval::w2(gen, held_out)?,
            train_seconds: train_s,
            generate_seconds: gen_s,
        });
    }
    Ok(RunRecord {
        arm: arm.label.clone(),
        seed,
        stops,
        metrics,
        data_hash: format!("{:x}", hasher.finalize()),
    })
}
