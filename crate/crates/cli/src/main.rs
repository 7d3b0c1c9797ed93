use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hybo::benchmarks::{by_name, Observation};
use hybo::bo::Method;
use hybo::campaign::{self, CampaignError, ExperimentConfig};
use hybo::gp::{FitOptions, GpPosterior, TrainingSet};
use hybo::rng::{stream, Purpose};

#[derive(Parser)]
#[command(name = "hybo", version, about = "Bayesian optimization of hybrid mechanistic / data-driven models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a seeded campaign and write per-seed CSVs and checkpoints.
    Run(RunArgs),
    /// Cross-seed log10-regret statistics of a campaign directory.
    Aggregate {
        dir: PathBuf,
        /// Defaults to `<dir>/aggregate.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// SAA-EI and EI on a decision grid for the iteration after a checkpoint.
    Surface {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Points per decision axis.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        /// Defaults to `surface-<iteration>.csv` next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render a trial, aggregate or surface CSV as SVG.
    Plot {
        csv: PathBuf,
        /// Defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Query a benchmark once at a decision given in SI units.
    Simulate {
        #[arg(long)]
        benchmark: String,
        #[arg(required = true, allow_negative_numbers = true)]
        u: Vec<f64>,
    },
    /// Fit a GP to CSV data and print its hyperparameters as JSON.
    FitGp(FitGpArgs),
}

/// Flags override the matching fields of `--config`.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Scenario count S.
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long)]
    gp_starts: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed_count")]
    seeds: Option<Vec<u64>>,
    /// Shorthand for seeds 0..N.
    #[arg(long)]
    seed_count: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write measured wall-clock times instead of zeros (breaks byte-identical reruns).
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args)]
struct FitGpArgs {
    #[arg(long)]
    data: PathBuf,
    /// Label column; every other column is an input unless `--inputs` is given.
    #[arg(long)]
    output: String,
    #[arg(long, value_delimiter = ',')]
    inputs: Option<Vec<String>>,
    /// Input columns left unstandardized.
    #[arg(long, value_delimiter = ',')]
    raw: Vec<String>,
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = if error.downcast_ref::<CampaignError>().is_some_and(CampaignError::is_config) { 2 } else { 1 };
        Failure { code, error }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    CampaignError::Config(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Aggregate { dir, output } => aggregate(&dir, output),
        Command::Surface { checkpoint, grid, output } => surface(&checkpoint, grid, output),
        Command::Plot { csv, output } => plot(&csv, output),
        Command::Simulate { benchmark, u } => simulate(&benchmark, &u),
        Command::FitGp(args) => fit_gp(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error chain, skipping causes whose text an outer message already includes.
fn describe(error: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

/// Merge the config file (if any) with flag overrides and validate the result.
fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut table = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
            text.parse::<toml::Table>().map_err(|e| config_error(format!("{}: {}", path.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    let mut set = |key: &str, v: Option<toml::Value>| {
        if let Some(v) = v {
            table.insert(key.to_string(), v);
        }
    };
    let int = |n: usize| toml::Value::Integer(n as i64);
    set("benchmark", args.benchmark.clone().map(toml::Value::String));
    set("method", args.method.map(|m| toml::Value::String(m.name().into())));
    set("n_init", args.n_init.map(int));
    set("iterations", args.iterations.map(int));
    set("scenarios", args.scenarios.map(int));
    set("n_starts", args.n_starts.map(int));
    set("gp_starts", args.gp_starts.map(int));
    set("beta", args.beta.map(toml::Value::Float));
    set("epsilon", args.epsilon.map(toml::Value::Float));
    let seeds = args.seeds.clone().or(args.seed_count.map(|n| (0..n).collect()));
    set("seeds", seeds.map(|s| toml::Value::Array(s.into_iter().map(|v| toml::Value::Integer(v as i64)).collect())));
    set("output_dir", args.output_dir.as_ref().map(|p| toml::Value::String(p.display().to_string())));
    Ok(ExperimentConfig::from_toml(&table.to_string())?)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    if args.jobs == 0 {
        return Err(config_error("--jobs must be positive"));
    }
    let cfg = resolve_config(&args)?;
    let states = campaign::run_campaign(&cfg, args.jobs, args.record_timing)?;
    for s in &states {
        println!("seed {}: {} iterations, regret {:e}", s.seed, s.iteration, s.regret());
    }
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}

fn aggregate(dir: &Path, output: Option<PathBuf>) -> Result<(), Failure> {
    let rows = campaign::aggregate_dir(dir)?;
    let out = output.unwrap_or_else(|| dir.join("aggregate.csv"));
    campaign::write_atomic(&out, &campaign::write_aggregate(&rows))?;
    println!("{}", out.display());
    Ok(())
}

fn surface(checkpoint: &Path, grid: usize, output: Option<PathBuf>) -> Result<(), Failure> {
    if grid == 0 {
        return Err(config_error("--grid must be positive"));
    }
    let state = campaign::load_checkpoint(checkpoint)?;
    let bench = by_name(&state.benchmark).map_err(CampaignError::from)?;
    let s = campaign::acquisition_surface(bench.as_ref(), &state, grid)?;
    let out = output.unwrap_or_else(|| checkpoint.with_file_name(format!("surface-{}.csv", state.iteration + 1)));
    campaign::write_atomic(&out, &s.to_csv())?;
    println!(
        "{}: SAA-EI zero on {:.1}% of solvable points, EI nonzero on {:.1}%",
        out.display(),
        100.0 * s.saa_ei_zero_fraction(),
        100.0 * s.ei_nonzero_fraction()
    );
    Ok(())
}

fn plot(csv: &Path, output: Option<PathBuf>) -> Result<(), Failure> {
    let svg = campaign::plot_csv(csv)?;
    let out = output.unwrap_or_else(|| csv.with_extension("svg"));
    campaign::write_atomic(&out, svg.as_bytes())?;
    println!("{}", out.display());
    Ok(())
}

fn simulate(benchmark: &str, u: &[f64]) -> Result<(), Failure> {
    let bench = by_name(benchmark).map_err(|e| config_error(e.to_string()))?;
    let sp = &bench.model().space;
    if u.len() != sp.nu() {
        return Err(config_error(format!("{benchmark} has {} decisions, got {}", sp.nu(), u.len())));
    }
    for (v, x) in sp.decisions.iter().zip(u) {
        println!("{} = {}", v.label(), v.display(*x));
    }
    match bench.observe(u).context("observation failed")? {
        Observation::Feasible(m) => {
            println!("measured (SI) = {m:?}");
            let f = bench.true_objective(u).context("objective failed")?;
            println!("objective = {}", f.map_or("infeasible".to_string(), |f| f.to_string()));
        }
        Observation::Infeasible => println!("infeasible"),
    }
    println!("f* = {}", bench.optimum().value);
    Ok(())
}

fn fit_gp(args: FitGpArgs) -> Result<(), Failure> {
    let mut rdr = csv::Reader::from_path(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let headers = rdr.headers().context("CSV header")?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column `{name}`"));
    let out = col(&args.output).map_err(|e| config_error(e.to_string()))?;
    let input_names: Vec<String> = match &args.inputs {
        Some(v) => v.clone(),
        None => headers.iter().filter(|h| *h != args.output).map(String::from).collect(),
    };
    let cols = input_names.iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>().map_err(|e| config_error(e.to_string()))?;
    if cols.is_empty() {
        return Err(config_error("no input columns"));
    }
    if let Some(r) = args.raw.iter().find(|r| !input_names.contains(r)) {
        return Err(config_error(format!("--raw column `{r}` is not an input")));
    }
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row.context("CSV row")?;
        let num = |j: usize| row[j].trim().parse::<f64>().map_err(|_| anyhow!("row {}: `{}` is not a number", i + 2, &row[j]));
        inputs.push(cols.iter().map(|&j| num(j)).collect::<Result<Vec<_>, _>>()?);
        labels.push(num(out)?);
    }
    let standardize: Vec<bool> = input_names.iter().map(|n| !args.raw.contains(n)).collect();
    let data = TrainingSet::new(&inputs, &labels, &standardize).context("training data")?;
    if args.starts == 0 {
        return Err(config_error("--starts must be positive"));
    }
    let opts = FitOptions { n_starts: args.starts, ..Default::default() };
    let gp = GpPosterior::fit(data, &opts, &mut stream(args.seed, 0, Purpose::GpFit)).context("GP fit")?;
    let json = serde_json::to_string_pretty(&gp.summary()).context("serializing summary")?;
    println!("{json}");
    if gp.jitter() > 0.0 {
        log::warn!("fit needed diagonal jitter {:e}; inputs may be nearly duplicated", gp.jitter());
    }
    Ok(())
}
