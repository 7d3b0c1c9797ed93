//! Augmented Lagrangian local solver for bound- and equality-constrained NLPs.
//!
//! Outer loop: `λ ← λ + ρ·c(z)` when the violation dropped to at most a
//! quarter of the last accepted value, otherwise `ρ ← 10ρ`. Each subproblem
//! `min f + λᵀc + ρ/2‖c‖²` over the box is solved by [`minimize_box`].
//!
//! Near a feasible solution the first-order update can lag the true
//! multipliers by more than round-off lets the subproblem correct, so
//! feasible iterates are also tested with least-squares multipliers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::boxmin::{minimize_box, BoxOptions, BoxStatus};
use super::problem::{inf_norm, project, projected_gradient_norm, NlpProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Use a materialized dense Jacobian instead of the block structure.
    pub dense_jacobian: bool,
    pub memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            opt_tol: 1e-6,
            max_outer: 200,
            max_inner: 500,
            initial_penalty: 10.0,
            max_penalty: 1e12,
            dense_jacobian: false,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Failed,
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub point: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Projected-gradient ∞-norm of the Lagrangian.
    pub stationarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub multipliers: Vec<f64>,
    /// Violation after every accepted outer iteration.
    pub violation_trace: Vec<f64>,
    pub message: Option<String>,
}

struct Subproblem<'a, P: ?Sized> {
    problem: &'a P,
    lambda: &'a [f64],
    rho: f64,
    dense: bool,
    scratch: Vec<f64>,
}

impl<P: NlpProblem + ?Sized> Subproblem<'_, P> {
    fn value(&self, z: &[f64]) -> f64 {
        match self.problem.values(z) {
            Some((f, c)) => {
                let mut v = f;
                for (ci, li) in c.iter().zip(self.lambda) {
                    v += li * ci + 0.5 * self.rho * ci * ci;
                }
                v
            }
            None => f64::NAN,
        }
    }

    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        let Some(ev) = self.problem.evaluate(z) else {
            return f64::NAN;
        };
        let mut v = ev.objective;
        self.scratch.clear();
        for (ci, li) in ev.constraints.iter().zip(self.lambda) {
            v += li * ci + 0.5 * self.rho * ci * ci;
            self.scratch.push(li + self.rho * ci);
        }
        if self.scratch.is_empty() {
            g.copy_from_slice(&ev.gradient);
        } else {
            if self.dense {
                ev.jacobian.dense_transpose_mul(&self.scratch, g);
            } else {
                ev.jacobian.transpose_mul(&self.scratch, g);
            }
            for (gi, fi) in g.iter_mut().zip(&ev.gradient) {
                *gi += fi;
            }
        }
        v
    }
}

/// Solve from `z0` (clipped into the bounds).
pub fn solve_local<P: NlpProblem + ?Sized>(problem: &P, z0: &[f64], opts: &SolverOptions) -> LocalSolution {
    let (lower, upper) = (problem.lower_bounds(), problem.upper_bounds());
    let m = problem.num_constraints();
    let mut z = z0.to_vec();
    project(&mut z, lower, upper);

    let Some((_, c0)) = problem.values(&z) else {
        return failed(z, m, "objective or constraints not evaluable at the start point");
    };
    let mut lambda = vec![0.0; m];
    let mut rho = opts.initial_penalty;
    let mut reference = inf_norm(&c0).max(0.1);
    let mut inner_tol = if m == 0 { opts.opt_tol } else { 1e-2f64.max(opts.opt_tol) };
    let mut total_iters = 0;
    let mut trace = Vec::new();
    let mut stalls = 0;
    let mut last = None;

    for outer in 0..opts.max_outer.max(1) {
        let box_opts = BoxOptions {
            max_iter: opts.max_inner,
            pg_tol: inner_tol,
            f_rel_tol: 0.0,
            memory: opts.memory,
            initial_step: 0.1,
        };
        let mut sub = Subproblem {
            problem,
            lambda: &lambda,
            rho,
            dense: opts.dense_jacobian,
            scratch: Vec::with_capacity(m),
        };
        let res = minimize_box(
            |x, g| match g {
                None => sub.value(x),
                Some(g) => sub.value_grad(x, g),
            },
            &z,
            lower,
            upper,
            &box_opts,
        );
        total_iters += res.iterations;
        if res.status == BoxStatus::NonFiniteStart {
            return failed(z, m, "subproblem not evaluable");
        }
        z = res.x;
        let Some((f, c)) = problem.values(&z) else {
            return failed(z, m, "constraints not evaluable at subproblem solution");
        };
        let v = inf_norm(&c);
        // The subproblem gradient is the Lagrangian gradient at λ + ρc.
        let stationarity = res.pg_norm;
        let new_lambda: Vec<f64> = lambda.iter().zip(&c).map(|(l, ci)| l + rho * ci).collect();
        last = Some((f, v, stationarity, new_lambda.clone(), res.status));

        if v <= opts.feas_tol {
            // The estimate only certifies; the iteration keeps the first-order update.
            let certified = if stationarity <= opts.opt_tol {
                Some((stationarity, new_lambda.clone()))
            } else if m > 0 {
                least_squares_multipliers(problem, &z, &new_lambda).filter(|(s, _)| *s <= opts.opt_tol)
            } else {
                None
            };
            if let Some((stationarity, multipliers)) = certified {
                trace.push(v);
                return LocalSolution {
                    point: z,
                    objective: f,
                    max_violation: v,
                    stationarity,
                    status: SolveStatus::Converged,
                    iterations: total_iters,
                    outer_iterations: outer + 1,
                    multipliers,
                    violation_trace: trace,
                    message: None,
                };
            }
        }

        let inner_failed = matches!(res.status, BoxStatus::LineSearchFailed);
        if v <= (0.25 * reference).max(opts.feas_tol) {
            lambda = new_lambda;
            reference = v;
            trace.push(v);
            inner_tol = (inner_tol * 0.1).max(0.5 * opts.opt_tol);
            stalls = if inner_failed && v <= opts.feas_tol { stalls + 1 } else { 0 };
        } else {
            if rho >= opts.max_penalty {
                stalls += 1;
            }
            rho = (rho * 10.0).min(opts.max_penalty);
            if inner_failed {
                stalls += 1;
            }
        }
        if stalls >= 3 {
            let (f, v, s, l, _) = last.unwrap();
            return LocalSolution {
                point: z,
                objective: f,
                max_violation: v,
                stationarity: s,
                status: SolveStatus::Failed,
                iterations: total_iters,
                outer_iterations: outer + 1,
                multipliers: l,
                violation_trace: trace,
                message: Some(format!("no progress; last subproblem status {:?}", res.status)),
            };
        }
    }

    let (f, v, s, l, st) = last.unwrap();
    LocalSolution {
        point: z,
        objective: f,
        max_violation: v,
        stationarity: s,
        status: SolveStatus::MaxIterations,
        iterations: total_iters,
        outer_iterations: opts.max_outer,
        multipliers: l,
        violation_trace: trace,
        message: Some(format!("outer iteration limit; last subproblem status {st:?}")),
    }
}

fn failed(point: Vec<f64>, m: usize, msg: &str) -> LocalSolution {
    LocalSolution {
        point,
        objective: f64::NAN,
        max_violation: f64::INFINITY,
        stationarity: f64::INFINITY,
        status: SolveStatus::Failed,
        iterations: 0,
        outer_iterations: 0,
        multipliers: vec![0.0; m],
        violation_trace: Vec::new(),
        message: Some(msg.to_string()),
    }
}

/// Multipliers minimizing `‖∇f + Jᵀλ‖` over the free variables, with the
/// resulting projected stationarity. The active set is read off the
/// Lagrangian gradient at `guess`.
fn least_squares_multipliers<P: NlpProblem + ?Sized>(problem: &P, z: &[f64], guess: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (lower, upper) = (problem.lower_bounds(), problem.upper_bounds());
    let ev = problem.evaluate(z)?;
    let mut g = vec![0.0; z.len()];
    ev.jacobian.transpose_mul(guess, &mut g);
    let free: Vec<usize> = (0..z.len())
        .filter(|&i| {
            let gi = g[i] + ev.gradient[i];
            !((z[i] <= lower[i] && gi > 0.0) || (z[i] >= upper[i] && gi < 0.0))
        })
        .collect();
    let jt = ev.jacobian.to_dense().transpose().select_rows(&free);
    let rhs = -DVector::from_iterator(free.len(), free.iter().map(|&i| ev.gradient[i]));
    let lambda = jt.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let lambda: Vec<f64> = lambda.iter().copied().collect();
    if !lambda.iter().all(|l| l.is_finite()) {
        return None;
    }
    let s = lagrangian_stationarity(problem, z, &lambda)?;
    Some((s, lambda))
}

/// Stationarity of the Lagrangian at `z` for the given multipliers.
pub fn lagrangian_stationarity<P: NlpProblem + ?Sized>(problem: &P, z: &[f64], multipliers: &[f64]) -> Option<f64> {
    let ev = problem.evaluate(z)?;
    let mut g = vec![0.0; z.len()];
    ev.jacobian.transpose_mul(multipliers, &mut g);
    for (gi, fi) in g.iter_mut().zip(&ev.gradient) {
        *gi += fi;
    }
    Some(projected_gradient_norm(z, &g, problem.lower_bounds(), problem.upper_bounds()))
}
