//! `mvst`: fit, sample and simulate matrix-variate skew-t mixtures.
//!
//! Exit status is 0 on success, 1 for invalid input or usage, and 2 when
//! the numerical machinery fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvst_core::io::{fit_result_to_json, params_from_json, read_dataset, write_dataset, write_labels, write_text};
use mvst_core::sim::{comparison_experiment, generate_mixture_sample, rmse_experiment, scenario_params, ScenarioId};
use mvst_core::{ari, fit_mixture, mcr, FitConfig, FitResult, MvstError, RescaleTiming, Variant};

#[derive(Debug, Parser)]
#[command(name = "mvst", version, about = "Finite mixtures of matrix-variate skew-t distributions")]
struct Cli {
    /// Worker threads (defaults to MVST_THREADS, then to all cores)
    #[arg(long, global = true, env = "MVST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a mixture to a long-format dataset
    Fit(FitArgs),
    /// Draw from a fitted or declared mixture
    Sample(SampleArgs),
    /// Draw from one of the built-in simulation scenarios
    Simulate(SimulateArgs),
    /// Run a replicated simulation experiment
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Mvn,
    Mvt,
    Rmvsn,
    Mvst,
}

impl From<Model> for Variant {
    fn from(m: Model) -> Self {
        match m {
            Model::Mvn => Variant::Mvn,
            Model::Mvt => Variant::Mvt,
            Model::Rmvsn => Variant::Rmvsn,
            Model::Mvst => Variant::Mvst,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rescale {
    PerIteration,
    AtConvergence,
}

#[derive(Debug, Args)]
struct FitOptions {
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    nu_min: f64,
    #[arg(long, default_value_t = 200.0)]
    nu_max: f64,
    #[arg(long, value_enum, default_value_t = Rescale::AtConvergence)]
    rescale: Rescale,
    #[arg(long, default_value_t = 10)]
    kmeans_restarts: usize,
    #[arg(long, default_value_t = 5.0)]
    nu_init: f64,
}

impl FitOptions {
    fn config(&self, variant: Variant) -> FitConfig {
        FitConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            nu_bounds: (self.nu_min, self.nu_max),
            seed: self.seed,
            rescale_timing: match self.rescale {
                Rescale::PerIteration => RescaleTiming::PerIteration,
                Rescale::AtConvergence => RescaleTiming::AtConvergence,
            },
            variant,
            nu_init: self.nu_init,
            kmeans_restarts: self.kmeans_restarts,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// True labels, used to report ARI and MCR
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of components; a comma-separated list fits each and keeps the lowest BIC
    #[arg(long, value_delimiter = ',', required = true)]
    groups: Vec<usize>,
    #[arg(long, value_enum)]
    model: Model,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Rmse,
    Compare,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long)]
    scenario: ScenarioId,
    /// Sample sizes (default 250,500,1000 for rmse and 500 for compare)
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Replications (default 50 for rmse and 20 for compare)
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long)]
    out_dir: PathBuf,
}

fn run_fit(args: &FitArgs) -> mvst_core::Result<()> {
    let (data, labels) = read_dataset(&args.data, args.labels.as_deref())?;
    let config = args.options.config(args.model.into());
    log::info!("resolved configuration: {config:?}");
    let mut best: Option<FitResult> = None;
    for &g in &args.groups {
        let fit = fit_mixture(&data, g, &config)?;
        println!(
            "G = {g}: loglik = {:.6}, BIC = {:.6}, parameters = {}, iterations = {}, converged = {}",
            fit.loglik, fit.bic, fit.n_params, fit.trace.iterations, fit.trace.converged
        );
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    let fit = best.ok_or_else(|| MvstError::InvalidArgument("no group count given".into()))?;
    if args.groups.len() > 1 {
        println!("lowest BIC at G = {}", fit.params.groups());
    }
    if let Some(truth) = &labels {
        println!("ARI = {:.6}", ari(truth, &fit.labels)?);
        println!("MCR = {:.6}", mcr(truth, &fit.labels)?);
    }
    write_text(&args.out, &fit_result_to_json(&fit)?)
}

fn write_draws(
    theta: &mvst_core::MixtureParams,
    count: usize,
    seed: u64,
    out: &Path,
    labels_out: Option<&Path>,
) -> mvst_core::Result<()> {
    let (data, labels) = generate_mixture_sample(theta, count, seed)?;
    write_dataset(&data, out)?;
    if let Some(path) = labels_out {
        write_labels(&labels, path)?;
    }
    Ok(())
}

fn run_sample(args: &SampleArgs) -> mvst_core::Result<()> {
    let theta = params_from_json(&std::fs::read_to_string(&args.params)?)?;
    write_draws(&theta, args.count, args.seed, &args.out, args.labels_out.as_deref())
}

fn run_simulate(args: &SimulateArgs) -> mvst_core::Result<()> {
    let spec = scenario_params(args.scenario)?;
    write_draws(&spec.params, args.count, args.seed, &args.out, args.labels_out.as_deref())
}

fn run_benchmark(args: &BenchmarkArgs) -> mvst_core::Result<()> {
    let config = args.options.config(Variant::Mvst);
    log::info!("resolved configuration: {config:?}");
    let report = match args.experiment {
        Experiment::Rmse => {
            let sizes = if args.sizes.is_empty() { vec![250, 500, 1000] } else { args.sizes.clone() };
            rmse_experiment(args.scenario, &sizes, args.reps.unwrap_or(50), args.options.seed, &config)?
        }
        Experiment::Compare => {
            let sizes = if args.sizes.is_empty() { vec![500] } else { args.sizes.clone() };
            let reps = args.reps.unwrap_or(20);
            let mut merged = comparison_experiment(args.scenario, sizes[0], reps, args.options.seed, &config)?;
            for &size in &sizes[1..] {
                let more = comparison_experiment(args.scenario, size, reps, args.options.seed, &config)?;
                merged.cells.extend(more.cells);
                merged.wall_clock_secs += more.wall_clock_secs;
            }
            merged
        }
    };
    let stem = match args.experiment {
        Experiment::Rmse => "rmse",
        Experiment::Compare => "compare",
    };
    report.write_files(&args.out_dir, stem)?;
    eprintln!("{stem} experiment finished in {:.1} s", report.wall_clock_secs);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot set up {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Sample(args) => run_sample(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Benchmark(args) => run_benchmark(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
