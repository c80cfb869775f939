//! `coregen` command-line driver.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coregen::hardgen::{DecorePolicy, Iterations};

#[derive(Parser, Debug)]
#[command(name = "coregen", version, about = "Generate hard UNSAT instances by breaking easy cores")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Root seed; every task derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Run directory that receives all outputs.
    #[arg(long, global = true, env = "COREGEN_OUT_DIR", default_value = "coregen-out")]
    pub out_dir: PathBuf,
    /// Per-solve conflict budget.
    #[arg(long, global = true)]
    pub conflict_limit: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    /// Never modify the seed's core clauses.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub protect_core: bool,
    #[arg(long, value_enum, default_value_t = PolicyArg::Model)]
    pub decore_policy: PolicyArg,
    /// Refinement iterations: a number or `auto` (one per sampled clause).
    #[arg(long, default_value = "auto", value_parser = parse_iterations)]
    pub iterations: Iterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Add a variable already in the formula, valued by a model of the rest
    /// of the core.
    Model,
    /// Add a fresh variable.
    Fresh,
}

impl From<PolicyArg> for DecorePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Model => DecorePolicy::ModelGuided,
            PolicyArg::Fresh => DecorePolicy::FreshVariable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Gnn,
    Oracle,
    Identity,
}

fn parse_iterations(s: &str) -> Result<Iterations, String> {
    if s == "auto" {
        return Ok(Iterations::Auto);
    }
    s.parse().map(Iterations::Fixed).map_err(|_| format!("expected a number or `auto`, got `{s}`"))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one DIMACS file.
    Solve {
        input: PathBuf,
        /// Solver preset.
        #[arg(long, default_value = "default")]
        preset: String,
    },
    /// Extract a minimal unsatisfiable subset and write it as JSON.
    ExtractCore {
        input: PathBuf,
        /// Output file; defaults to `<out-dir>/cores/<stem>.core.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample unsatisfiable random k-CNF seeds.
    SampleKsat {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 400.0)]
        mu_m: f64,
        #[arg(long, default_value_t = 100.0)]
        sigma_m: f64,
        #[arg(long, default_value_t = 4.4)]
        mu_c: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma_c: f64,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Run oracle refinement on each seed and store every (instance, core) pair.
    Harvest {
        seeds_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[command(flatten)]
        refine: RefineArgs,
    },
    /// Train the core predictor on a pair store.
    Train {
        pairs_dir: PathBuf,
        /// Output model path; defaults to `<out-dir>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Generate hard instances from each seed.
    Generate {
        seeds_dir: PathBuf,
        /// Trained model; the exact oracle is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Outputs per seed.
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[command(flatten)]
        refine: RefineArgs,
    },
    /// Compare generated instances against their originals.
    Evaluate {
        orig_dir: PathBuf,
        gen_dir: PathBuf,
        /// Comma-separated solver presets.
        #[arg(long, default_value = "vsids-neg,vsids-pos,lowest,random")]
        portfolio: String,
    },
    /// Measure whether generated instances improve hardness prediction.
    AugmentBench {
        pool_dir: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GeneratorArg::Gnn)]
        generator: GeneratorArg,
        /// Comma-separated training-set sizes.
        #[arg(long, value_delimiter = ',', default_value = "30")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 15)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        per_original: usize,
        #[arg(long, default_value = "vsids-neg,vsids-pos,lowest,random")]
        portfolio: String,
        #[command(flatten)]
        refine: RefineArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    match commands::run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            log::error!("{failures} task(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
