//! Sample-average deterministic equivalent of the GP-constrained stochastic
//! program.
//!
//! Variables are `(u, x_1, …, x_S)`; each scenario contributes the residual
//! block `g(x_s, y_s, u) = 0` with `y_s = T(μ(q_s) + σ(q_s)·ξ_s)` substituted,
//! where `q_s` are the GP regressors drawn from `(u, x_s)` and `T` the output
//! transform. The solver sees every variable mapped affinely onto a unit
//! scale.

mod acquisition;
mod explicit;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acquisition::{combine, AcquisitionKind, AcquisitionParams};
pub use explicit::ExplicitScenarioNlp;

use crate::gp::MultiOutputGp;
use crate::model::HybridModel;
use crate::nlp::{
    latin_hypercube, multistart_from, solve_root, Evaluation, FnSystem, JacobianBlock, MultistartError, MultistartResult,
    NlpProblem, RootOptions, SolverOptions, SparseJacobian,
};
use crate::rng::{stream, Purpose, Rng};

/// Standard-normal draws `ξ_s`, one row per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub xi: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn sample(count: usize, dim: usize, rng: &mut Rng) -> Self {
        assert!(count >= 1, "need at least one scenario");
        let xi = (0..count).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect();
        ScenarioSet { xi }
    }

    /// Draws for `seed`, reproducible bit for bit.
    pub fn from_seed(count: usize, dim: usize, seed: u64) -> Self {
        Self::sample(count, dim, &mut stream(seed, 0, Purpose::Scenarios))
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{0} requires a finite incumbent")]
    MissingIncumbent(AcquisitionKind),
    #[error("the LCB needs at least two scenarios for a sample variance")]
    LcbNeedsTwoScenarios,
    #[error("GP has {found} output(s) but the model has {expected} unknown(s)")]
    OutputMismatch { expected: usize, found: usize },
    #[error("scenario draws have dimension {found}, expected {expected}")]
    DrawDimension { expected: usize, found: usize },
}

/// The SAA acquisition NLP over normalized variables `w`, with physical
/// values `z = offset + scale·w`.
pub struct ScenarioNlp<'a> {
    model: &'a HybridModel,
    gp: &'a MultiOutputGp,
    scenarios: ScenarioSet,
    kind: AcquisitionKind,
    params: AcquisitionParams,
    offset: Vec<f64>,
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    regressor_slots: Vec<usize>,
}

/// Slot-space quantities for one scenario.
struct ScenarioEval {
    objective: f64,
    /// total derivative of f with respect to every slot (y columns unused)
    objective_grad: Vec<f64>,
    residuals: Vec<f64>,
    residual_grads: Vec<Vec<f64>>,
}

impl<'a> ScenarioNlp<'a> {
    pub fn new(
        model: &'a HybridModel,
        gp: &'a MultiOutputGp,
        scenarios: ScenarioSet,
        kind: AcquisitionKind,
        params: AcquisitionParams,
    ) -> Result<Self, ScenarioError> {
        let sp = &model.space;
        if gp.num_outputs() != sp.ny() {
            return Err(ScenarioError::OutputMismatch { expected: sp.ny(), found: gp.num_outputs() });
        }
        if let Some(row) = scenarios.xi.iter().find(|r| r.len() != sp.ny()) {
            return Err(ScenarioError::DrawDimension { expected: sp.ny(), found: row.len() });
        }
        if kind.needs_incumbent() && !params.incumbent.is_some_and(f64::is_finite) {
            return Err(ScenarioError::MissingIncumbent(kind));
        }
        if kind == AcquisitionKind::SaaLcb && scenarios.len() < 2 {
            return Err(ScenarioError::LcbNeedsTwoScenarios);
        }
        let (mut offset, mut scale, mut lower, mut upper) = (vec![], vec![], vec![], vec![]);
        for v in &sp.decisions {
            offset.push(v.lower);
            scale.push(v.upper - v.lower);
            lower.push(0.0);
            upper.push(1.0);
        }
        for _ in 0..scenarios.len() {
            for v in &sp.states {
                if v.is_bounded() {
                    offset.push(v.lower);
                    scale.push(v.scale.unwrap_or(v.upper - v.lower));
                    lower.push(0.0);
                    upper.push((v.upper - v.lower) / v.scale.unwrap_or(v.upper - v.lower));
                } else {
                    let sc = v.scale.unwrap_or(1.0);
                    let off = v.guess.unwrap_or(0.0);
                    offset.push(off);
                    scale.push(sc);
                    lower.push((v.lower - off) / sc);
                    upper.push((v.upper - off) / sc);
                }
            }
        }
        let regressor_slots = model.gp.regressors.iter().map(|r| sp.slot(*r)).collect();
        Ok(ScenarioNlp { model, gp, scenarios, kind, params, offset, scale, lower, upper, regressor_slots })
    }

    pub fn kind(&self) -> AcquisitionKind {
        self.kind
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    pub fn model(&self) -> &HybridModel {
        self.model
    }

    pub fn gp(&self) -> &MultiOutputGp {
        self.gp
    }

    pub fn to_physical(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.offset).zip(&self.scale).map(|((w, o), s)| o + s * w).collect()
    }

    pub fn to_normalized(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.offset).zip(&self.scale).map(|((z, o), s)| (z - o) / s).collect()
    }

    /// Split a physical point into `u` and the per-scenario states.
    pub fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], Vec<&'z [f64]>) {
        let (nu, nx) = (self.model.space.nu(), self.model.space.nx());
        let (u, rest) = z.split_at(nu);
        let xs = if nx == 0 { vec![&rest[..0]; self.scenarios.len()] } else { rest.chunks(nx).collect() };
        (u, xs)
    }

    /// `y_s` for one scenario (physical units).
    pub fn draw(&self, s: usize, u: &[f64], x: &[f64]) -> Vec<f64> {
        let q = self.model.regressor_values(u, x);
        self.gp
            .reparameterized_draw(&q, &self.scenarios.xi[s])
            .into_iter()
            .map(|g| self.model.gp.transform.apply(g).0)
            .collect()
    }

    fn scenario_values(&self, s: usize, u: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let y = self.draw(s, u, x);
        let slots = self.model.space.pack(x, &y, u);
        let mut r = vec![0.0; self.model.residuals.len()];
        self.model.residuals.eval(&slots, &mut r);
        (self.model.objective.tape.eval(&slots), r)
    }

    fn scenario_eval(&self, s: usize, u: &[f64], x: &[f64]) -> ScenarioEval {
        let sp = &self.model.space;
        let (nx, ny) = (sp.nx(), sp.ny());
        let q = self.model.regressor_values(u, x);
        let preds = self.gp.predict_with_gradient(&q);
        let mut y = vec![0.0; ny];
        // dy[k][slot]
        let mut dy = vec![vec![0.0; sp.num_slots()]; ny];
        for (k, p) in preds.iter().enumerate() {
            let xi = self.scenarios.xi[s][k];
            let (yk, dyk) = self.model.gp.transform.apply(p.mean + p.std * xi);
            y[k] = yk;
            for (r, &slot) in self.regressor_slots.iter().enumerate() {
                dy[k][slot] += dyk * (p.dmean[r] + xi * p.dstd[r]);
            }
        }
        let slots = sp.pack(x, &y, u);
        let total = |grad: &mut Vec<f64>| {
            for k in 0..ny {
                let gy = grad[nx + k];
                if gy != 0.0 {
                    for (gv, d) in grad.iter_mut().zip(&dy[k]) {
                        *gv += gy * d;
                    }
                }
            }
        };
        let mut objective_grad = vec![0.0; slots.len()];
        let objective = self.model.objective.tape.eval_grad(&slots, &mut objective_grad);
        total(&mut objective_grad);
        let mut residuals = Vec::with_capacity(nx);
        let mut residual_grads = Vec::with_capacity(nx);
        for eq in &self.model.residuals.equations {
            let mut g = vec![0.0; slots.len()];
            residuals.push(eq.tape.eval_grad(&slots, &mut g));
            total(&mut g);
            residual_grads.push(g);
        }
        ScenarioEval { objective, objective_grad, residuals, residual_grads }
    }

    /// Acquisition value at a physical point.
    pub fn objective_at(&self, z: &[f64]) -> Option<f64> {
        let (u, xs) = self.split(z);
        let f: Vec<f64> = xs.iter().enumerate().map(|(s, x)| self.scenario_values(s, u, x).0).collect();
        let v = combine(self.kind, &self.params, &f, None);
        v.is_finite().then_some(v)
    }

    /// Per-scenario objectives at a physical point.
    pub fn scenario_objectives(&self, z: &[f64]) -> Vec<f64> {
        let (u, xs) = self.split(z);
        xs.iter().enumerate().map(|(s, x)| self.scenario_values(s, u, x).0).collect()
    }

    /// Solve scenario `s`'s residuals for `x` at fixed `u`, with `y` either
    /// drawn (`mean_only = false`) or set to the posterior mean.
    fn scenario_root(&self, s: usize, u: &[f64], mean_only: bool, guesses: &[Vec<f64>]) -> Option<Vec<f64>> {
        let sp = &self.model.space;
        let nx = sp.nx();
        if nx == 0 {
            return Some(vec![]);
        }
        let zeros = vec![0.0; sp.ny()];
        let xi = if mean_only { &zeros } else { &self.scenarios.xi[s] };
        let system = FnSystem {
            dim: nx,
            f: |x: &[f64], r: &mut [f64]| {
                let q = self.model.regressor_values(u, x);
                let y: Vec<f64> = self
                    .gp
                    .reparameterized_draw(&q, xi)
                    .into_iter()
                    .map(|g| self.model.gp.transform.apply(g).0)
                    .collect();
                self.model.residuals.eval(&sp.pack(x, &y, u), r);
                true
            },
            bounds: Some((sp.states.iter().map(|v| v.lower).collect(), sp.states.iter().map(|v| v.upper).collect())),
        };
        solve_root(&system, guesses, &RootOptions::default()).ok().map(|r| r.x)
    }

    fn default_guesses(&self) -> Vec<Vec<f64>> {
        let states = &self.model.space.states;
        let mut g = vec![states.iter().map(|v| v.initial()).collect::<Vec<_>>()];
        for t in [0.25, 0.75] {
            g.push(
                states
                    .iter()
                    .map(|v| if v.is_bounded() { v.lower + t * (v.upper - v.lower) } else { v.initial() })
                    .collect(),
            );
        }
        g
    }

    /// Physical point with every scenario's states solved at fixed `u`, or
    /// `None` if some scenario has no root inside the state bounds.
    pub fn solve_states(&self, u: &[f64]) -> Option<Vec<f64>> {
        let mut z = u.to_vec();
        let mut guesses = self.default_guesses();
        for s in 0..self.scenarios.len() {
            let x = self.scenario_root(s, u, false, &guesses)?;
            z.extend_from_slice(&x);
            if guesses.len() == 3 {
                guesses.insert(0, x);
            } else {
                guesses[0] = x;
            }
        }
        Some(z)
    }

    /// Acquisition value of `u` with the states eliminated by root finding.
    pub fn reduced_objective(&self, u: &[f64]) -> Option<f64> {
        self.solve_states(u).and_then(|z| self.objective_at(&z))
    }

    /// A start point for the solver at `u`: drawn-scenario roots, else
    /// posterior-mean roots, else the state guesses.
    pub fn initial_point(&self, u: &[f64]) -> Vec<f64> {
        let mut z = u.to_vec();
        let defaults = self.default_guesses();
        let mut mean_root: Option<Option<Vec<f64>>> = None;
        for s in 0..self.scenarios.len() {
            let x = self.scenario_root(s, u, false, &defaults).unwrap_or_else(|| {
                mean_root
                    .get_or_insert_with(|| self.scenario_root(s, u, true, &defaults))
                    .clone()
                    .unwrap_or_else(|| defaults[0].clone())
            });
            z.extend_from_slice(&x);
        }
        self.to_normalized(&z)
    }

    /// Largest residual at a physical point, recomputed through the model's
    /// own evaluator rather than the NLP's assembled constraints.
    pub fn certify(&self, z: &[f64]) -> f64 {
        let (u, xs) = self.split(z);
        let mut worst = 0.0f64;
        for (s, x) in xs.iter().enumerate() {
            let y = self.draw(s, u, x);
            match self.model.evaluate(u, x, &y) {
                Ok((_, g)) => worst = g.iter().fold(worst, |m, v| m.max(v.abs())),
                Err(_) => return f64::INFINITY,
            }
        }
        worst
    }
}

impl NlpProblem for ScenarioNlp<'_> {
    fn num_variables(&self) -> usize {
        self.offset.len()
    }

    fn num_constraints(&self) -> usize {
        self.scenarios.len() * self.model.residuals.len()
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn values(&self, w: &[f64]) -> Option<(f64, Vec<f64>)> {
        let z = self.to_physical(w);
        let (u, xs) = self.split(&z);
        let mut f = Vec::with_capacity(xs.len());
        let mut c = Vec::with_capacity(self.num_constraints());
        for (s, x) in xs.iter().enumerate() {
            let (fs, r) = self.scenario_values(s, u, x);
            f.push(fs);
            c.extend(r);
        }
        let v = combine(self.kind, &self.params, &f, None);
        (v.is_finite() && c.iter().all(|x| x.is_finite())).then_some((v, c))
    }

    fn evaluate(&self, w: &[f64]) -> Option<Evaluation> {
        let sp = &self.model.space;
        let (nu, nx, ny) = (sp.nu(), sp.nx(), sp.ny());
        let ng = self.model.residuals.len();
        let z = self.to_physical(w);
        let (u, xs) = self.split(&z);
        let evals: Vec<ScenarioEval> = xs.iter().enumerate().map(|(s, x)| self.scenario_eval(s, u, x)).collect();
        let f: Vec<f64> = evals.iter().map(|e| e.objective).collect();
        let mut weights = vec![0.0; f.len()];
        let objective = combine(self.kind, &self.params, &f, Some(&mut weights));

        let n = self.num_variables();
        let mut gradient = vec![0.0; n];
        let mut constraints = Vec::with_capacity(self.num_constraints());
        let mut blocks = Vec::with_capacity(evals.len());
        let u_slot = nx + ny;
        for (s, (e, ws)) in evals.iter().zip(&weights).enumerate() {
            let x0 = nu + s * nx;
            for j in 0..nu {
                gradient[j] += ws * e.objective_grad[u_slot + j] * self.scale[j];
            }
            for j in 0..nx {
                gradient[x0 + j] = ws * e.objective_grad[j] * self.scale[x0 + j];
            }
            constraints.extend_from_slice(&e.residuals);
            let cols: Vec<usize> = (0..nu).chain(x0..x0 + nx).collect();
            let mut b = JacobianBlock::new(s * ng, ng, cols);
            for (i, g) in e.residual_grads.iter().enumerate() {
                for j in 0..nu {
                    *b.at_mut(i, j) = g[u_slot + j] * self.scale[j];
                }
                for j in 0..nx {
                    *b.at_mut(i, nu + j) = g[j] * self.scale[x0 + j];
                }
            }
            blocks.push(b);
        }
        let finite = objective.is_finite()
            && gradient.iter().chain(&constraints).all(|v| v.is_finite())
            && blocks.iter().all(|b| b.values.iter().all(|v| v.is_finite()));
        finite.then(|| Evaluation {
            objective,
            gradient,
            constraints,
            jacobian: SparseJacobian { nrows: self.num_constraints(), ncols: n, blocks },
        })
    }
}

/// Multistart solve of the acquisition NLP from `n_starts` LHS samples of `u`.
pub fn solve_acquisition(
    nlp: &ScenarioNlp<'_>,
    n_starts: usize,
    rng: &mut Rng,
    opts: &SolverOptions,
) -> Result<(MultistartResult, Vec<Vec<f64>>), MultistartError> {
    let sp = &nlp.model().space;
    let us = latin_hypercube(n_starts, &sp.decision_lower(), &sp.decision_upper(), rng);
    let starts: Vec<Vec<f64>> = us.iter().map(|u| nlp.initial_point(u)).collect();
    multistart_from(nlp, &starts, opts).map(|r| (r, us))
}

/// Decision-variable block of a normalized solution, in physical units.
pub fn decisions_of(nlp: &ScenarioNlp<'_>, w: &[f64]) -> Vec<f64> {
    let z = nlp.to_physical(w);
    z[..nlp.model().space.nu()].to_vec()
}
