//! Experiment configuration.
//!
//! Strict TOML: unknown keys are rejected. `--set a.b=value` overrides are
//! applied to the parsed table before it is deserialized, so they go through
//! the same validation as file contents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use streamflow::datasets::{DatasetSpec, DatasetVariant, GaussianMixture, PointSampler, SliceLayout};
use streamflow::ode::IntegratorSpec;
use streamflow::trainer::TrainConfig;

use crate::error::{CliError, CliResult};
use crate::experiments::{BenchConfig, SchemeStrengths};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One run per seed; the seed drives data, initialization and batches.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: DataConfig,
    pub source: SourceSpec,
    /// `train.seed` is ignored; runs take their seed from `seeds`.
    pub train: TrainConfig,
    pub integrator: IntegratorSpec,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            dataset: DataConfig::default(),
            source: SourceSpec::Gaussian,
            train: TrainConfig::default(),
            integrator: IntegratorSpec::default(),
            eval: EvalSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub variant: DatasetVariant,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            variant: DatasetVariant::GaussianMixture(GaussianMixture::two_gaussians()),
            n_train: 100,
            n_test: 1000,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            variant: self.variant.clone(),
            n_train: self.n_train,
            n_test: self.n_test,
            seed,
        }
    }
}

/// Distribution of the t = 0 end for single-slice datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Standard Gaussian in the data dimension.
    Gaussian,
    Mixture(GaussianMixture),
}

impl SourceSpec {
    pub fn sampler(&self, dim: usize) -> CliResult<Box<dyn PointSampler>> {
        match self {
            SourceSpec::Gaussian => Ok(Box::new(GaussianMixture::standard(dim))),
            SourceSpec::Mixture(m) => {
                m.validate()?;
                if m.dim() != dim {
                    return Err(CliError::config(format!(
                        "source mixture has dimension {} but the data has {dim}",
                        m.dim()
                    )));
                }
                Ok(Box::new(m.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Points generated per stop by `train` runs.
    pub n_generate: usize,
    /// Points per side in each W2 comparison.
    pub w2_samples: usize,
    pub stops: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_generate: 1000,
            w2_samples: 1000,
            stops: vec![1.0],
        }
    }
}

/// Benchmark-only knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub schemes: SchemeStrengths,
    pub crossing: SliceLayout,
    pub paired: SliceLayout,
}

impl Default for BenchSettings {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSettings {
            schemes: b.schemes,
            crossing: b.crossing,
            paired: b.paired,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("`seeds` must list at least one seed"));
        }
        self.train.validate()?;
        self.integrator.validate()?;
        self.dataset.spec(0).validate()?;
        let e = &self.eval;
        if e.n_generate == 0 || e.w2_samples == 0 {
            return Err(CliError::config("eval.n_generate and eval.w2_samples must be at least 1"));
        }
        if e.stops.is_empty() || e.stops.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::config("eval.stops must be non-empty times in [0, 1]"));
        }
        if e.stops.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config("eval.stops must be strictly increasing"));
        }
        Ok(())
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            train: self.train.clone(),
            integrator: self.integrator.clone(),
            n_train: self.dataset.n_train,
            n_eval: self.eval.w2_samples,
            schemes: self.bench.schemes,
            crossing: self.bench.crossing,
            paired: self.bench.paired,
        }
    }

    /// Canonical TOML text of the resolved config.
    pub fn to_toml(&self) -> String {
        let mut table = Table::try_from(self).expect("config serializes to TOML");
        if let Some(Value::Table(t)) = table.get_mut("train") {
            t.remove("seed");
        }
        toml::to_string(&table).expect("table serializes to TOML")
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Read an optional config file and apply overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            text.parse::<Table>()
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

pub fn from_table(table: Table) -> CliResult<ExperimentConfig> {
    if let Some(Value::Table(t)) = table.get("train") {
        if t.contains_key("seed") {
            return Err(CliError::config(
                "`train.seed` is not used; list run seeds in top-level `seeds`",
            ));
        }
    }
    let cfg: ExperimentConfig = ExperimentConfig::deserialize(Value::Table(table))
        .map_err(|e| CliError::config(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `dotted.key=value` override. Values are parsed as TOML; text
/// that is not valid TOML is taken as a string.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("override `{assignment}` has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(CliError::config(format!(
                    "override `{key}`: `{p}` is not a table"
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parse `a..b` (half-open), `a..=b` or a comma list.
pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::config(format!("cannot parse seed list `{s}`"));
    let num = |x: &str| x.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parse a comma-separated list of floats.
pub fn parse_floats(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("`{x}` is not a number")))
        })
        .collect()
}
