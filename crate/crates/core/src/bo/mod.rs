//! Experiment loops: hybrid BO over scenario acquisition programs, standard
//! BO with analytic EI on the objective, and uniform random search.
//!
//! Every iteration `k` draws from streams keyed by `(seed, k, purpose)` and
//! refits from the stored records, so a state reloaded from a checkpoint
//! continues exactly as an uninterrupted run would.

mod standard;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use standard::{expected_improvement, StandardAcquisition};

use crate::benchmarks::{Benchmark, BenchmarkError, Observation};
use crate::gp::{FitOptions, GpError, GpSummary, MultiOutputGp};
use crate::model::{HybridModel, ModelError};
use crate::nlp::{latin_hypercube, SolverOptions};
use crate::rng::{stream, Purpose};
use crate::scenario::{
    decisions_of, solve_acquisition, AcquisitionKind, AcquisitionParams, ScenarioError, ScenarioNlp, ScenarioSet,
};

/// Reconstruction residual below which a trial counts as consistent.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    HybridSaaEi,
    HybridMean,
    HybridLcb,
    HybridSmoothEiSqrt,
    HybridSmoothEiSoftplus,
    StandardEi,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::HybridSaaEi,
        Method::HybridMean,
        Method::HybridLcb,
        Method::HybridSmoothEiSqrt,
        Method::HybridSmoothEiSoftplus,
        Method::StandardEi,
        Method::Random,
    ];

    /// Scenario acquisition of a hybrid method.
    pub fn acquisition(self) -> Option<AcquisitionKind> {
        match self {
            Method::HybridSaaEi => Some(AcquisitionKind::SaaEi),
            Method::HybridMean => Some(AcquisitionKind::Mean),
            Method::HybridLcb => Some(AcquisitionKind::SaaLcb),
            Method::HybridSmoothEiSqrt => Some(AcquisitionKind::SmoothEiSqrt),
            Method::HybridSmoothEiSoftplus => Some(AcquisitionKind::SmoothEiSoftplus),
            Method::StandardEi | Method::Random => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::HybridSaaEi => "hybrid-saa-ei",
            Method::HybridMean => "hybrid-mean",
            Method::HybridLcb => "hybrid-lcb",
            Method::HybridSmoothEiSqrt => "hybrid-smooth-ei-sqrt",
            Method::HybridSmoothEiSoftplus => "hybrid-smooth-ei-softplus",
            Method::StandardEi => "standard-ei",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Initial,
    Acquisition,
    /// Acquisition solve failed or found no improvement; best LHS probe used.
    Fallback,
    Random,
}

/// GP record standing in for an infeasible trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    pub regressors: Vec<f64>,
    pub labels: Vec<f64>,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    /// BO iteration that proposed the trial; 0 for the initial design.
    pub iteration: usize,
    pub provenance: Provenance,
    pub u: Vec<f64>,
    /// Measured variables, absent for an infeasible trial.
    pub measurements: Option<Vec<f64>>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub residual_norm: Option<f64>,
    /// Objective of the reconstructed state; absent when infeasible.
    pub objective: Option<f64>,
    pub feasible: bool,
    pub imputation: Option<Imputation>,
    /// Label used by objective-surrogate methods for an infeasible trial.
    pub penalty: Option<f64>,
    /// Acquisition value at the proposed point, when one was computed.
    pub acquisition_value: Option<f64>,
    pub note: Option<String>,
    pub wall_ms: u64,
}

impl TrialRecord {
    pub fn imputed(&self) -> bool {
        self.imputation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSettings {
    pub n_init: usize,
    pub iterations: usize,
    /// Scenario count `S` of the SAA acquisition.
    pub scenarios: usize,
    /// Multistarts for the acquisition problem.
    pub n_starts: usize,
    /// Multistarts for GP hyperparameter fitting.
    pub gp_starts: usize,
    pub beta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings {
            n_init: 2,
            iterations: 10,
            scenarios: 25,
            n_starts: 100,
            gp_starts: 100,
            beta: 2.0,
            epsilon: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

impl BoSettings {
    fn fit_options(&self) -> FitOptions {
        FitOptions { n_starts: self.gp_starts, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub benchmark: String,
    pub method: Method,
    pub seed: u64,
    pub settings: BoSettings,
    pub f_star: f64,
    pub records: Vec<TrialRecord>,
    /// Best feasible objective, `None` until a feasible trial exists.
    pub incumbent: Option<f64>,
    /// Completed BO iterations.
    pub iteration: usize,
    /// GP fitted in the last hybrid or standard iteration.
    pub gp: Vec<GpSummary>,
}

impl ExperimentState {
    pub fn is_complete(&self) -> bool {
        self.iteration >= self.settings.iterations
    }

    pub fn regret(&self) -> f64 {
        regret(self.incumbent, self.f_star)
    }

    /// Best feasible objective after the initial design and after every
    /// completed iteration.
    pub fn incumbent_trace(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        let mut trace = vec![None; self.iteration + 1];
        for r in &self.records {
            if let Some(f) = r.objective.filter(|_| r.feasible) {
                best = Some(best.map_or(f, |b| b.min(f)));
            }
            trace[r.iteration] = best;
        }
        for k in 1..trace.len() {
            if trace[k].is_none() {
                trace[k] = trace[k - 1];
            }
        }
        trace
    }

    /// Regret after the initial design and after every completed iteration.
    pub fn regret_trace(&self) -> Vec<f64> {
        self.incumbent_trace().into_iter().map(|f| regret(f, self.f_star)).collect()
    }
}

#[derive(Debug, Error)]
pub enum BoError {
    #[error("n_init must be at least 1")]
    NoInitialTrials,
    #[error("benchmark `{found}` does not match the state's `{expected}`")]
    BenchmarkMismatch { expected: String, found: String },
    #[error("benchmark `{0}` cannot handle an infeasible trial for this method")]
    NoInfeasibleRule(String),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("reconstruction failed: {0}")]
    Model(#[from] ModelError),
    #[error("GP fit failed: {0}")]
    Gp(#[from] GpError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// `f′ − f*`, or `+∞` while no feasible trial exists.
pub fn regret(incumbent: Option<f64>, f_star: f64) -> f64 {
    incumbent.map_or(f64::INFINITY, |f| f - f_star)
}

/// Run the initial Latin hypercube design.
pub fn initialize(
    bench: &dyn Benchmark,
    method: Method,
    settings: &BoSettings,
    seed: u64,
) -> Result<ExperimentState, BoError> {
    if settings.n_init == 0 {
        return Err(BoError::NoInitialTrials);
    }
    let sp = &bench.model().space;
    let mut state = ExperimentState {
        benchmark: bench.name().to_string(),
        method,
        seed,
        settings: settings.clone(),
        f_star: bench.optimum().value,
        records: Vec::new(),
        incumbent: None,
        iteration: 0,
        gp: Vec::new(),
    };
    let design = latin_hypercube(
        settings.n_init,
        &sp.decision_lower(),
        &sp.decision_upper(),
        &mut stream(seed, 0, Purpose::InitialDesign),
    );
    for u in design {
        let started = Instant::now();
        let rec = run_trial(bench, &state, u, Provenance::Initial, None, None, started)?;
        push(&mut state, rec);
    }
    Ok(state)
}

/// Execute one BO iteration and append its trial.
pub fn step(bench: &dyn Benchmark, state: &mut ExperimentState) -> Result<(), BoError> {
    if bench.name() != state.benchmark {
        return Err(BoError::BenchmarkMismatch { expected: state.benchmark.clone(), found: bench.name().to_string() });
    }
    let started = Instant::now();
    let k = state.iteration + 1;
    let rec = match state.method {
        Method::Random => {
            let sp = &bench.model().space;
            let mut rng = stream(state.seed, k as u64, Purpose::RandomTrial);
            let u: Vec<f64> =
                sp.decisions.iter().map(|v| rng.random_range(v.lower..=v.upper)).collect();
            run_trial(bench, state, u, Provenance::Random, None, None, started)?
        }
        Method::StandardEi => {
            let acq = StandardAcquisition::fit(bench, state, k)?;
            let proposal = acq.propose(state.settings.n_starts, &mut stream(state.seed, k as u64, Purpose::AcquisitionStarts));
            state.gp = acq.gp.summaries();
            run_trial(bench, state, proposal.u, proposal.provenance, proposal.value, proposal.note, started)?
        }
        m => {
            let kind = m.acquisition().expect("hybrid method");
            let ctx = HybridContext::fit(bench, state, k, kind)?;
            let proposal = ctx.propose(state)?;
            state.gp = ctx.gp.summaries();
            run_trial(bench, state, proposal.u, proposal.provenance, proposal.value, proposal.note, started)?
        }
    };
    let rec = TrialRecord { iteration: k, ..rec };
    log::debug!("seed {} iteration {k}: u = {:?}, objective {:?}", state.seed, rec.u, rec.objective);
    push(state, rec);
    state.iteration = k;
    Ok(())
}

/// Run remaining iterations up to the configured budget.
pub fn resume(bench: &dyn Benchmark, state: &mut ExperimentState, mut on_step: impl FnMut(&ExperimentState)) -> Result<(), BoError> {
    while !state.is_complete() {
        step(bench, state)?;
        on_step(state);
    }
    Ok(())
}

/// Initialize and run a whole experiment.
pub fn run(bench: &dyn Benchmark, method: Method, settings: &BoSettings, seed: u64) -> Result<ExperimentState, BoError> {
    let mut state = initialize(bench, method, settings, seed)?;
    resume(bench, &mut state, |_| {})?;
    Ok(state)
}

/// Standard BO with analytic EI; returns the regret trace.
pub fn run_standard_bo(bench: &dyn Benchmark, settings: &BoSettings, seed: u64) -> Result<Vec<f64>, BoError> {
    run(bench, Method::StandardEi, settings, seed).map(|s| s.regret_trace())
}

/// Uniform random search; returns the regret trace.
pub fn run_random(bench: &dyn Benchmark, settings: &BoSettings, seed: u64) -> Result<Vec<f64>, BoError> {
    run(bench, Method::Random, settings, seed).map(|s| s.regret_trace())
}

fn push(state: &mut ExperimentState, rec: TrialRecord) {
    if let Some(f) = rec.objective.filter(|_| rec.feasible) {
        state.incumbent = Some(state.incumbent.map_or(f, |g| g.min(f)));
    }
    state.records.push(rec);
}

fn run_trial(
    bench: &dyn Benchmark,
    state: &ExperimentState,
    u: Vec<f64>,
    provenance: Provenance,
    acquisition_value: Option<f64>,
    note: Option<String>,
    started: Instant,
) -> Result<TrialRecord, BoError> {
    let model = bench.model();
    let index = state.records.len();
    let mut rec = TrialRecord {
        index,
        iteration: 0,
        provenance,
        u,
        measurements: None,
        x: Vec::new(),
        y: Vec::new(),
        residual_norm: None,
        objective: None,
        feasible: false,
        imputation: None,
        penalty: None,
        acquisition_value,
        note,
        wall_ms: 0,
    };
    match bench.observe(&rec.u)? {
        Observation::Feasible(m) => {
            let r = model.reconstruct(&rec.u, &m)?;
            rec.objective = Some(model.objective_value(&rec.u, &r.x, &r.y));
            rec.feasible = r.residual_norm <= RECONSTRUCTION_TOL;
            rec.residual_norm = Some(r.residual_norm);
            rec.measurements = Some(m);
            rec.x = r.x;
            rec.y = r.y;
        }
        Observation::Infeasible => {
            let mut rng = stream(state.seed, index as u64, Purpose::Imputation);
            rec.imputation = bench
                .impute(&rec.u, &mut rng)
                .map(|i| Imputation { regressors: i.regressors, labels: i.labels, rule: i.rule });
            rec.penalty = bench.infeasible_penalty(&rec.u);
        }
    }
    rec.wall_ms = started.elapsed().as_millis() as u64;
    Ok(rec)
}

/// GP training set of the hybrid model: regressors and labels of feasible
/// trials plus imputed records for infeasible ones. Labels are per output.
pub fn hybrid_training_data(
    model: &HybridModel,
    records: &[TrialRecord],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), BoError> {
    let ny = model.space.ny();
    let mut inputs = Vec::with_capacity(records.len());
    let mut labels = vec![Vec::with_capacity(records.len()); ny];
    for r in records {
        let (q, l) = if r.feasible {
            (model.regressor_values(&r.u, &r.x), model.labels(&r.y))
        } else if let Some(imp) = &r.imputation {
            (imp.regressors.clone(), imp.labels.clone())
        } else {
            return Err(BoError::NoInfeasibleRule(model.name.clone()));
        };
        inputs.push(q);
        for (col, v) in labels.iter_mut().zip(l) {
            col.push(v);
        }
    }
    Ok((inputs, labels))
}

struct Proposal {
    u: Vec<f64>,
    provenance: Provenance,
    value: Option<f64>,
    note: Option<String>,
}

/// Fitted GP and scenario draws of one hybrid iteration.
pub struct HybridContext<'b> {
    pub model: &'b HybridModel,
    pub gp: MultiOutputGp,
    pub scenarios: ScenarioSet,
    pub kind: AcquisitionKind,
    pub params: AcquisitionParams,
    iteration: usize,
}

impl<'b> HybridContext<'b> {
    /// Fit the GP on all records and draw the scenarios for iteration `k`.
    /// EI-type kinds fall back to the mean while no incumbent exists.
    pub fn fit(bench: &'b dyn Benchmark, state: &ExperimentState, k: usize, kind: AcquisitionKind) -> Result<Self, BoError> {
        let model = bench.model();
        let (inputs, labels) = hybrid_training_data(model, &state.records)?;
        let gp = MultiOutputGp::fit(
            &inputs,
            &labels,
            &model.gp.standardize,
            &state.settings.fit_options(),
            &mut stream(state.seed, k as u64, Purpose::GpFit),
        )?;
        let kind = if kind.needs_incumbent() && state.incumbent.is_none() { AcquisitionKind::Mean } else { kind };
        let params = AcquisitionParams { incumbent: state.incumbent, beta: state.settings.beta, epsilon: state.settings.epsilon };
        let scenarios = ScenarioSet::sample(
            state.settings.scenarios,
            model.space.ny(),
            &mut stream(state.seed, k as u64, Purpose::Scenarios),
        );
        Ok(HybridContext { model, gp, scenarios, kind, params, iteration: k })
    }

    pub fn nlp(&self) -> Result<ScenarioNlp<'_>, ScenarioError> {
        ScenarioNlp::new(self.model, &self.gp, self.scenarios.clone(), self.kind, self.params)
    }

    fn propose(&self, state: &ExperimentState) -> Result<Proposal, BoError> {
        let nlp = self.nlp()?;
        let sp = &self.model.space;
        let starts_rng = stream(state.seed, self.iteration as u64, Purpose::AcquisitionStarts);
        let solved = solve_acquisition(&nlp, state.settings.n_starts, &mut starts_rng.clone(), &state.settings.solver);
        let reason = match solved {
            Ok((res, _)) if !(self.kind == AcquisitionKind::SaaEi && res.best.objective >= 0.0) => {
                let u = clamp_to_box(self.model, decisions_of(&nlp, &res.best.point));
                return Ok(Proposal { u, provenance: Provenance::Acquisition, value: Some(res.best.objective), note: None });
            }
            Ok(_) => "acquisition is zero at every converged start".to_string(),
            Err(e) => e.to_string(),
        };
        // Same stream, hence the same probes the solver started from.
        let probes = latin_hypercube(state.settings.n_starts, &sp.decision_lower(), &sp.decision_upper(), &mut starts_rng.clone());
        let (value, u) = best_probe(&probes, |u| nlp.reduced_objective(u));
        log::debug!("seed {} iteration {}: fallback ({reason})", state.seed, self.iteration);
        Ok(Proposal { u, provenance: Provenance::Fallback, value, note: Some(reason) })
    }
}

/// Lowest finite probe value, first index on ties; the first probe if none is finite.
pub(crate) fn best_probe(probes: &[Vec<f64>], f: impl Fn(&[f64]) -> Option<f64>) -> (Option<f64>, Vec<f64>) {
    let mut best: Option<(f64, usize)> = None;
    for (i, u) in probes.iter().enumerate() {
        if let Some(v) = f(u).filter(|v| v.is_finite()) {
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, i));
            }
        }
    }
    match best {
        Some((v, i)) => (Some(v), probes[i].clone()),
        None => (None, probes[0].clone()),
    }
}

fn clamp_to_box(model: &HybridModel, mut u: Vec<f64>) -> Vec<f64> {
    for (x, v) in u.iter_mut().zip(&model.space.decisions) {
        *x = x.clamp(v.lower, v.upper);
    }
    u
}
