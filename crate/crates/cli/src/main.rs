//! `rie`: estimate retrospective intervention effects, run balance checks,
//! pool imputations and run the benchmark simulation.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rie_core::error::ErrorKind;

use config::{RunConfig, RunOverrides, SimFileConfig, SimOverrides};

#[derive(Parser)]
#[command(name = "rie", version, about = "Retrospective intervention effects with super-learner propensity scores")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "RIE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate RIEs and write estimates, weights, balance and overlap diagnostics.
    Estimate(RunArgs),
    /// Write only the balance tables (unadjusted and ensemble-adjusted).
    Balance(RunArgs),
    /// Run the Monte Carlo benchmark study.
    Simulate(SimArgs),
    /// Pool estimates from multiply imputed data sets.
    Combine(CombineArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of ols, naive_ipw, matching, ensemble_ipw.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Cross-validation folds for the ensemble.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            data: self.data.clone(),
            output: self.out.clone(),
            seed: self.seed,
            methods: self.methods.clone(),
            folds: self.folds,
            alpha: self.alpha,
        }
    }
}

#[derive(Args)]
struct SimArgs {
    /// Optional simulation configuration (TOML); flags override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Sample size per run.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated noise-covariate counts, e.g. 0,5,10.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Smoke mode: two ensemble candidates and five folds.
    #[arg(long)]
    fast: bool,
    /// Also write per-run estimates to simstudy_raw.csv.
    #[arg(long)]
    raw: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CombineArgs {
    /// Estimate files, one per imputed data set.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Pooled estimates file.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = config::DEFAULT_ALPHA)]
    alpha: f64,
}

fn run(cli: Cli) -> rie_core::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(rie_core::Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| rie_core::Error::Usage(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Estimate(a) => commands::estimate(&RunConfig::load(&a.config, &a.overrides())?),
        Command::Balance(a) => commands::balance(&RunConfig::load(&a.config, &a.overrides())?),
        Command::Simulate(a) => {
            let o = SimOverrides {
                n: a.n,
                runs: a.runs,
                noise_dims: a.noise,
                seed: a.seed,
                methods: a.methods,
                fast: a.fast,
                raw: a.raw,
                output: a.out,
            };
            commands::simulate(&SimFileConfig::load(a.config.as_deref(), &o)?)
        }
        Command::Combine(a) => commands::combine(&a.inputs, &a.out, a.alpha),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
