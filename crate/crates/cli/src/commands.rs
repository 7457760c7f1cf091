//! Command implementations behind the `streamflow` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use streamflow::datasets::{self, GaussianMixture, PointSampler};
use streamflow::eval::{self, RunMetrics, SummaryRow};
use streamflow::gp_stream::{self, MeanFunction, ObservationSet};
use streamflow::kernels::{build_gram, KernelSpec, DEFAULT_JITTER_SCHEDULE};
use streamflow::ode::{self, IntegratorSpec};
use streamflow::rng::{self, streams};
use streamflow::trainer;
use streamflow::{Points, VectorFieldModel};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiments::{self, BenchReport, Benchmark};

pub const CHECKPOINT_FILE: &str = "checkpoint.sfck";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    /// SHA-256 of `config.toml` in the same directory.
    pub config_sha256: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Collects files written to one output directory.
struct ArtifactDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactDir {
    fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(ArtifactDir {
            dir,
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Write `config.toml` and `manifest.toml`.
    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
        let text = cfg.to_toml();
        self.write(CONFIG_FILE, text.as_bytes())?;
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: cfg.seeds.clone(),
            config_sha256: sha256_hex(text.as_bytes()),
            artifacts: self.artifacts,
        };
        let body = toml::to_string(&manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, body).map_err(CliError::io(&path))?;
        Ok(self.dir)
    }
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Train one model per seed. Returns the run directories.
pub fn train(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let data = datasets::generate(&cfg.dataset.spec(seed))?;
        let dim = data.train[0].dim();
        let tc = trainer::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let (model, trace) = if data.train.len() == 1 && !data.noise_source {
            let source = cfg.source.sampler(dim)?;
            trainer::train(&tc, source.as_ref(), &data.train[0])?
        } else {
            let noise = GaussianMixture::standard(dim);
            let noise = data.noise_source.then_some(&noise as &dyn PointSampler);
            trainer::train_multimarginal(&tc, &data.train, &data.train_groups(), &data.times, noise)?
        };
        let mut out = ArtifactDir::create(cfg.output_dir.join(format!("seed-{seed}")))?;
        out.write(CHECKPOINT_FILE, model.to_checkpoint().as_bytes())?;
        out.write(LOSS_FILE, &to_bytes(|w| trace.write_csv(w)))?;
        let run_cfg = ExperimentConfig {
            seeds: vec![seed],
            ..cfg.clone()
        };
        dirs.push(out.finish("train", &run_cfg)?);
    }
    Ok(dirs)
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub n: usize,
    pub stops: Vec<f64>,
    pub integrator: IntegratorSpec,
    pub seed: u64,
    /// Start points instead of standard Gaussian draws.
    pub source: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub binary: bool,
}

pub fn load_checkpoint(path: &Path) -> CliResult<VectorFieldModel> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(VectorFieldModel::from_checkpoint(&text)?)
}

/// File name of the samples at one stop.
pub fn stop_file(stop: f64, binary: bool) -> String {
    format!("samples_t{stop}.{}", if binary { "bin" } else { "csv" })
}

/// Integrate `n` source points to every stop; one file per stop.
pub fn generate(args: &GenerateArgs) -> CliResult<Vec<PathBuf>> {
    args.integrator.validate()?;
    let model = load_checkpoint(&args.checkpoint)?;
    let dim = model.arch().state_dim;
    let x0 = match &args.source {
        Some(p) => {
            let groups = read_long_csv(p)?;
            let (_, pts) = single_group(groups, p)?;
            if pts.dim() != dim {
                return Err(CliError::config(format!(
                    "{}: points have dimension {}, model expects {dim}",
                    p.display(),
                    pts.dim()
                )));
            }
            pts
        }
        None => {
            if args.n == 0 {
                return Err(CliError::config("--n must be at least 1"));
            }
            GaussianMixture::standard(dim).sample(args.n, &mut rng::stream(args.seed, streams::GENERATE))
        }
    };
    let covariates = match model.arch().covariate_dim {
        0 => None,
        c if c == dim => Some(&x0),
        c => {
            return Err(CliError::config(format!(
                "model takes a {c}-dimensional covariate; only c = x0 is supported here"
            )))
        }
    };
    let batches = ode::generate(&model, &x0, &args.integrator, &args.stops, covariates)?;
    fs::create_dir_all(&args.out_dir).map_err(CliError::io(&args.out_dir))?;
    let mut files = Vec::with_capacity(args.stops.len());
    for (stop, batch) in args.stops.iter().zip(&batches) {
        let path = args.out_dir.join(stop_file(*stop, args.binary));
        let stops = [*stop];
        let one = std::slice::from_ref(batch);
        let bytes = if args.binary {
            to_bytes(|w| ode::write_samples_binary(&stops, one, w))
        } else {
            to_bytes(|w| ode::write_samples_csv(&stops, one, w))
        };
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        files.push(path);
    }
    Ok(files)
}

/// Run a benchmark and write its tables under `out_dir/<name>/`.
///
/// Tables are written even when some runs fail; the error then reports the
/// failure count.
pub fn bench(bench: Benchmark, cfg: &ExperimentConfig, jobs: usize) -> CliResult<(BenchReport, PathBuf)> {
    cfg.validate()?;
    let report = experiments::run_bench(bench, &cfg.bench_config(), &cfg.seeds, jobs)?;
    check_pairing(&report)?;
    let mut out = ArtifactDir::create(cfg.output_dir.join(bench.name()))?;
    let metrics = report.metrics();
    out.write("metrics.csv", &to_bytes(|w| eval::write_metrics_csv(&metrics, w)))?;
    if !metrics.is_empty() {
        let summary = report.summary()?;
        out.write("summary.csv", &to_bytes(|w| eval::write_summary_csv(&summary, w)))?;
    }
    out.write(
        "runs.csv",
        &to_bytes(|w| {
            writeln!(w, "arm,seed,data_sha256")?;
            for r in &report.records {
                writeln!(w, "{},{},{}", r.arm, r.seed, r.data_hash)?;
            }
            Ok(())
        }),
    )?;
    if !report.failures.is_empty() {
        out.write(
            "failures.csv",
            &to_bytes(|w| {
                writeln!(w, "arm,seed,error")?;
                for f in &report.failures {
                    writeln!(w, "{},{},\"{}\"", f.arm, f.seed, f.error.to_string().replace('"', "'"))?;
                }
                Ok(())
            }),
        )?;
    }
    let dir = out.finish(&format!("bench {bench}"), cfg)?;
    if !report.failures.is_empty() {
        return Err(CliError::Partial {
            failed: report.failures.len(),
            total: report.failures.len() + report.records.len(),
        });
    }
    Ok((report, dir))
}

/// Every arm of a seed must have seen identical data.
pub fn check_pairing(report: &BenchReport) -> CliResult<()> {
    let mut by_seed: BTreeMap<u64, &str> = BTreeMap::new();
    for r in &report.records {
        let h = by_seed.entry(r.seed).or_insert(&r.data_hash);
        if *h != r.data_hash {
            return Err(streamflow::Error::Degenerate(format!(
                "seed {} saw different data across arms",
                r.seed
            ))
            .into());
        }
    }
    Ok(())
}

/// Conditional stream envelope on a time grid, as CSV.
pub fn pathstats(kernel: &KernelSpec, times: &[f64], values: &Points, grid_size: usize) -> CliResult<String> {
    if grid_size == 0 {
        return Err(CliError::config("grid size must be at least 1"));
    }
    let obs = ObservationSet::new(times.to_vec(), values.clone())?;
    let bundle = build_gram(kernel, times, &DEFAULT_JITTER_SCHEDULE)?;
    let grid: Vec<f64> = if grid_size == 1 {
        vec![0.5]
    } else {
        (0..grid_size).map(|i| i as f64 / (grid_size - 1) as f64).collect()
    };
    let rows = gp_stream::path_stats(&bundle, MeanFunction::Zero, &obs, &grid)?;
    let bytes = to_bytes(|w| gp_stream::write_path_stats_csv(&rows, w));
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

/// Parse a kernel given as an inline TOML table, e.g.
/// `{ type = "se", alpha = 1.0, l = 0.3 }`.
pub fn parse_kernel(text: &str) -> CliResult<KernelSpec> {
    #[derive(Deserialize)]
    struct Wrap {
        k: KernelSpec,
    }
    let w: Wrap = toml::from_str(&format!("k = {text}"))
        .map_err(|e| CliError::config(format!("bad kernel `{text}`: {}", e.message())))?;
    w.k.validate()?;
    Ok(w.k)
}

/// Parse observation rows: `;` between times, `,` between dimensions.
pub fn parse_rows(text: &str) -> CliResult<Points> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(crate::config::parse_floats)
        .collect::<CliResult<_>>()?;
    Ok(Points::from_rows(&rows)?)
}

/// Exact W2 between the first `n` points of two sample files.
pub fn eval_w2(generated: &Path, reference: &Path, n: Option<usize>) -> CliResult<f64> {
    let (_, a) = single_group(read_long_csv(generated)?, generated)?;
    let (_, b) = single_group(read_long_csv(reference)?, reference)?;
    let take = |p: Points| match n {
        Some(k) if k < p.len() => p.select(&(0..k).collect::<Vec<_>>()),
        _ => p,
    };
    Ok(eval::w2(&take(a), &take(b))?)
}

/// Summary table of a metrics CSV.
pub fn eval_summary(metrics: &Path) -> CliResult<Vec<SummaryRow>> {
    let runs = read_metrics_csv(metrics)?;
    Ok(eval::summarize(&runs, |m| m.algorithm.clone())?)
}

pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<RunMetrics>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let bad = |line: usize| CliError::config(format!("{}:{line}: malformed metrics row", path.display()));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 1));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1));
        out.push(RunMetrics {
            seed: f[0].parse().map_err(|_| bad(i + 1))?,
            algorithm: f[1].to_string(),
            scheme: f[2].to_string(),
            w2: num(f[3])?,
            train_seconds: num(f[4])?,
            generate_seconds: num(f[5])?,
        });
    }
    Ok(out)
}

/// Read a long-format CSV (`key,row,dim,value`) into point sets, one per
/// distinct key, in order of first appearance.
pub fn read_long_csv(path: &Path) -> CliResult<Vec<(String, Points)>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let bad = |line: usize, what: &str| CliError::config(format!("{}:{line}: {what}", path.display()));
    let mut groups: Vec<(String, BTreeMap<(usize, usize), f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let row: usize = f[1].parse().map_err(|_| bad(i + 1, "bad row index"))?;
        let dim: usize = f[2].parse().map_err(|_| bad(i + 1, "bad dim index"))?;
        let value: f64 = f[3].parse().map_err(|_| bad(i + 1, "bad value"))?;
        let g = match groups.iter().position(|(k, _)| k == f[0]) {
            Some(g) => g,
            None => {
                groups.push((f[0].to_string(), BTreeMap::new()));
                groups.len() - 1
            }
        };
        groups[g].1.insert((row, dim), value);
    }
    groups
        .into_iter()
        .map(|(key, cells)| {
            let rows = cells.keys().map(|k| k.0 + 1).max().unwrap_or(0);
            let dims = cells.keys().map(|k| k.1 + 1).max().unwrap_or(0);
            if cells.len() != rows * dims {
                return Err(CliError::config(format!(
                    "{}: group `{key}` is not a complete {rows}×{dims} table",
                    path.display()
                )));
            }
            let flat: Vec<f64> = cells.into_values().collect();
            Ok((key, Points::from_flat(dims, flat)?))
        })
        .collect()
}

fn single_group(mut groups: Vec<(String, Points)>, path: &Path) -> CliResult<(String, Points)> {
    match groups.len() {
        1 => Ok(groups.remove(0)),
        0 => Err(CliError::config(format!("{}: no data rows", path.display()))),
        k => Err(CliError::config(format!(
            "{}: expected one sample set, found {k}",
            path.display()
        ))),
    }
}
