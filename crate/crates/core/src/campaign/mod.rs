//! Seeded experiment campaigns and their artifacts: per-seed trial CSVs,
//! resumable checkpoints, cross-seed regret aggregation, acquisition
//! surfaces and SVG plots.
//!
//! CSVs use `.` decimals, `\n` line endings and Rust's shortest round-trip
//! float formatting, so identical runs produce identical bytes.

mod aggregate;
mod config;
mod plot;
mod surface;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use aggregate::{aggregate, aggregate_dir, quantile, read_regret_trace, write_aggregate, AggregateRow};
pub use config::ExperimentConfig;
pub use plot::{plot_csv, svg_for_aggregate, svg_for_surface, svg_for_trace, PLOT_FLOOR};
pub use surface::{acquisition_surface, grid, Surface};

use crate::benchmarks::{by_name, Benchmark, BenchmarkError};
use crate::bo::{self, BoError, ExperimentState};

#[derive(Debug, Error)]
pub enum CampaignError {
    /// Invalid configuration or command-line input.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<CampaignError> },
    #[error("an acquisition surface needs a feasible incumbent")]
    NoIncumbent,
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
}

impl CampaignError {
    pub fn is_config(&self) -> bool {
        match self {
            CampaignError::Config(_) => true,
            CampaignError::Seed { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io { path: path.to_path_buf(), source }
}

/// Write through a sibling temporary file and rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CampaignError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_checkpoint(path: &Path, state: &ExperimentState) -> Result<(), CampaignError> {
    let json = serde_json::to_vec_pretty(state).expect("state serializes");
    write_atomic(path, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<ExperimentState, CampaignError> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|e| CampaignError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per trial: `iteration, <decisions>, objective, feasible,
/// incumbent, regret, wall_ms, provenance`, decisions in their labelled
/// units. Timing is written as 0 unless
/// requested, keeping default output reproducible.
pub fn trial_csv(bench: &dyn Benchmark, state: &ExperimentState, record_timing: bool) -> Vec<u8> {
    let mut w = csv_writer();
    let decisions = &bench.model().space.decisions;
    let mut header = vec!["iteration".to_string()];
    header.extend(decisions.iter().map(|v| v.label()));
    header.extend(["objective", "feasible", "incumbent", "regret", "wall_ms", "provenance"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    let mut incumbent: Option<f64> = None;
    for r in &state.records {
        if let Some(f) = r.objective.filter(|_| r.feasible) {
            incumbent = Some(incumbent.map_or(f, |g| g.min(f)));
        }
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.u.iter().zip(decisions).map(|(x, v)| v.display(*x).to_string()));
        row.push(fmt_opt(r.objective));
        row.push(r.feasible.to_string());
        row.push(fmt_opt(incumbent));
        row.push(bo::regret(incumbent, state.f_star).to_string());
        row.push(if record_timing { r.wall_ms } else { 0 }.to_string());
        row.push(serde_json::to_value(r.provenance).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn save(cfg: &ExperimentConfig, bench: &dyn Benchmark, state: &ExperimentState, record_timing: bool) -> Result<(), CampaignError> {
    save_checkpoint(&cfg.checkpoint_path(state.seed), state)?;
    write_atomic(&cfg.csv_path(state.seed), &trial_csv(bench, state, record_timing))
}

/// Start or continue one seed. An existing checkpoint is resumed when it was
/// produced by the same benchmark, method and settings; a larger iteration
/// budget extends it.
pub fn run_seed(cfg: &ExperimentConfig, bench: &dyn Benchmark, seed: u64, record_timing: bool) -> Result<ExperimentState, CampaignError> {
    let settings = cfg.settings();
    let ckpt = cfg.checkpoint_path(seed);
    let mut state = if ckpt.exists() {
        let mut s = load_checkpoint(&ckpt)?;
        let mismatch = |reason: String| CampaignError::Checkpoint { path: ckpt.clone(), reason };
        if s.benchmark != cfg.benchmark || s.method != cfg.method || s.seed != seed {
            return Err(mismatch(format!("written for {} / {} / seed {}", s.benchmark, s.method, s.seed)));
        }
        if (bo::BoSettings { iterations: settings.iterations, ..s.settings.clone() }) != settings {
            return Err(mismatch("settings differ from the configuration".into()));
        }
        if s.iteration > settings.iterations {
            return Err(mismatch(format!("already has {} iterations, more than the {} requested", s.iteration, settings.iterations)));
        }
        s.settings.iterations = settings.iterations;
        s
    } else {
        bo::initialize(bench, cfg.method, &settings, seed)?
    };
    save(cfg, bench, &state, record_timing)?;
    let mut write_failure = None;
    bo::resume(bench, &mut state, |s| {
        if write_failure.is_none() {
            write_failure = save(cfg, bench, s, record_timing).err();
        }
    })?;
    match write_failure {
        Some(e) => Err(e),
        None => Ok(state),
    }
}

/// Run every seed of `cfg` on up to `jobs` threads. All seeds are attempted;
/// the first failure in seed order is returned after the others finish.
pub fn run_campaign(cfg: &ExperimentConfig, jobs: usize, record_timing: bool) -> Result<Vec<ExperimentState>, CampaignError> {
    cfg.validate()?;
    let bench = by_name(&cfg.benchmark)?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    write_atomic(&cfg.output_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CampaignError::Config(format!("cannot start {jobs} jobs: {e}")))?;
    let results: Vec<Result<ExperimentState, CampaignError>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                run_seed(cfg, bench.as_ref(), seed, record_timing)
                    .map_err(|e| CampaignError::Seed { seed, source: Box::new(e) })
            })
            .collect()
    });
    results.into_iter().collect()
}
