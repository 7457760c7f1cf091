use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamflow::ode::IntegratorSpec;
use streamflow_cli::commands::{self, GenerateArgs};
use streamflow_cli::config::{self, parse_floats, parse_seeds};
use streamflow_cli::error::{exit, CliError, CliResult};
use streamflow_cli::experiments::Benchmark;

#[derive(Parser)]
#[command(name = "streamflow", version, about = "Stream-level conditional flow matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.iterations=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed list (`0..30`, `0..=29` or `1,2,3`); replaces `seeds`.
    #[arg(long)]
    seeds: Option<String>,
    /// Replaces `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<config::ExperimentConfig> {
        let mut cfg = config::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SolverArgs {
    /// euler, rk4 or dopri5.
    #[arg(long, default_value = "rk4")]
    method: String,
    /// Steps over [0, 1] for fixed-step methods.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-5)]
    atol: f64,
}

impl SolverArgs {
    fn spec(&self) -> CliResult<IntegratorSpec> {
        match self.method.as_str() {
            "euler" => Ok(IntegratorSpec::Euler { n_steps: self.steps }),
            "rk4" => Ok(IntegratorSpec::Rk4 { n_steps: self.steps }),
            "dopri5" => Ok(IntegratorSpec::dopri5(self.rtol, self.atol)),
            m => Err(CliError::config(format!("unknown method `{m}`; use euler, rk4 or dopri5"))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed; writes checkpoint, loss trace and manifest.
    Train(ConfigArgs),
    /// Integrate source points through a trained field.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of standard Gaussian start points.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Comma-separated output times.
        #[arg(long, default_value = "1.0")]
        stops: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start points as long-format CSV instead of Gaussian draws.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write the binary sample format instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Multi-seed benchmark with paired seeds.
    Bench {
        /// table1, table2, table4, crossing, smoothpath or mixture3.
        name: Benchmark,
        #[command(flatten)]
        config: ConfigArgs,
        /// Concurrent runs.
        #[arg(long, env = "STREAMFLOW_JOBS", default_value_t = 1)]
        jobs: usize,
    },
    /// Conditional stream mean and sd on a time grid.
    Pathstats {
        /// Inline TOML kernel table.
        #[arg(long, default_value = "{ type = \"se\", alpha = 1.0, l = 0.3 }")]
        kernel: String,
        /// Observation times, comma-separated.
        #[arg(long, default_value = "0,1")]
        times: String,
        /// Observed values: `;` between times, `,` between dimensions.
        #[arg(long, default_value = "0;1")]
        values: String,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact W2 between two sample files, or a summary of a metrics table.
    Eval {
        #[arg(required_unless_present = "metrics", requires = "reference")]
        generated: Option<PathBuf>,
        reference: Option<PathBuf>,
        /// Compare the first N points of each file.
        #[arg(long)]
        n: Option<usize>,
        /// Metrics CSV to summarize instead.
        #[arg(long, conflicts_with = "generated")]
        metrics: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            for dir in commands::train(&args.load()?)? {
                println!("{}", dir.display());
            }
        }
        Command::Generate {
            checkpoint,
            n,
            stops,
            solver,
            seed,
            source,
            out,
            binary,
        } => {
            let args = GenerateArgs {
                checkpoint,
                n,
                stops: parse_floats(&stops)?,
                integrator: solver.spec()?,
                seed,
                source,
                out_dir: out,
                binary,
            };
            for f in commands::generate(&args)? {
                println!("{}", f.display());
            }
        }
        Command::Bench { name, config, jobs } => {
            let cfg = config.load()?;
            let (report, dir) = commands::bench(name, &cfg, jobs)?;
            println!("group,mean,se,n");
            for r in report.summary()? {
                println!("{},{:.6},{:.6},{}", r.group, r.mean, r.se, r.n);
            }
            eprintln!("tables written to {}", dir.display());
        }
        Command::Pathstats {
            kernel,
            times,
            values,
            grid,
            out,
        } => {
            let csv = commands::pathstats(
                &commands::parse_kernel(&kernel)?,
                &parse_floats(&times)?,
                &commands::parse_rows(&values)?,
                grid,
            )?;
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(CliError::io(&p))?,
                None => print!("{csv}"),
            }
        }
        Command::Eval {
            generated,
            reference,
            n,
            metrics,
        } => match (metrics, generated, reference) {
            (Some(m), _, _) => {
                println!("group,mean,se,n");
                for r in commands::eval_summary(&m)? {
                    println!("{},{:.6},{:.6},{}", r.group, r.mean, r.se, r.n);
                }
            }
            (None, Some(g), Some(r)) => println!("{:.9}", commands::eval_w2(&g, &r, n)?),
            _ => return Err(CliError::config("eval needs two sample files or --metrics")),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
