use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use super::auglag::{solve_local, LocalSolution, SolveStatus, SolverOptions};
use super::lhs::latin_hypercube;
use super::problem::NlpProblem;
use crate::rng::Rng;

/// Produces initial guesses for a multistart run.
pub trait StartSampler {
    fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>>;
}

/// Latin hypercube over a box.
pub struct BoxSampler<'a> {
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl StartSampler for BoxSampler<'_> {
    fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        latin_hypercube(n, self.lower, self.upper, rng)
    }
}

#[derive(Debug, Error)]
pub enum MultistartError {
    #[error("no start points were supplied")]
    NoStarts,
    #[error("none of {} starts converged (statuses: {statuses:?})", statuses.len())]
    NoConvergedStart { statuses: Vec<SolveStatus> },
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best: LocalSolution,
    pub best_index: usize,
    pub solutions: Vec<LocalSolution>,
}

/// Total order used to pick the winner: objective, then violation, then the
/// point lexicographically.
pub fn compare_solutions(a: &LocalSolution, b: &LocalSolution) -> Ordering {
    a.objective
        .total_cmp(&b.objective)
        .then(a.max_violation.total_cmp(&b.max_violation))
        .then_with(|| {
            a.point
                .iter()
                .zip(&b.point)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

/// Run local solves from explicit start points and keep the best converged one.
pub fn multistart_from<P: NlpProblem + ?Sized>(
    problem: &P,
    starts: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<MultistartResult, MultistartError> {
    if starts.is_empty() {
        return Err(MultistartError::NoStarts);
    }
    let solutions: Vec<LocalSolution> = starts.par_iter().map(|z0| solve_local(problem, z0, opts)).collect();
    let best_index = solutions
        .iter()
        .enumerate()
        .filter(|(_, s)| s.status == SolveStatus::Converged && s.objective.is_finite())
        .min_by(|(_, a), (_, b)| compare_solutions(a, b))
        .map(|(i, _)| i);
    match best_index {
        Some(i) => Ok(MultistartResult {
            best: solutions[i].clone(),
            best_index: i,
            solutions,
        }),
        None => Err(MultistartError::NoConvergedStart {
            statuses: solutions.iter().map(|s| s.status).collect(),
        }),
    }
}

pub fn multistart_solve<P, S>(
    problem: &P,
    n_starts: usize,
    sampler: &S,
    rng: &mut Rng,
    opts: &SolverOptions,
) -> Result<MultistartResult, MultistartError>
where
    P: NlpProblem + ?Sized,
    S: StartSampler + ?Sized,
{
    let starts = sampler.sample(n_starts, rng);
    multistart_from(problem, &starts, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::problem::{Evaluation, SparseJacobian};
    use crate::rng::{stream, Purpose};

    /// Box-only problem with closure objective.
    struct Scalar<F: Fn(f64) -> (f64, f64) + Sync> {
        f: F,
        lower: [f64; 1],
        upper: [f64; 1],
    }

    impl<F: Fn(f64) -> (f64, f64) + Sync> NlpProblem for Scalar<F> {
        fn num_variables(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn lower_bounds(&self) -> &[f64] {
            &self.lower
        }
        fn upper_bounds(&self) -> &[f64] {
            &self.upper
        }
        fn values(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
            Some(((self.f)(z[0]).0, vec![]))
        }
        fn evaluate(&self, z: &[f64]) -> Option<Evaluation> {
            let (v, d) = (self.f)(z[0]);
            Some(Evaluation {
                objective: v,
                gradient: vec![d],
                constraints: vec![],
                jacobian: SparseJacobian::empty(1),
            })
        }
    }

    #[test]
    fn convex_starts_agree() {
        let p = Scalar {
            f: |u| ((u - 0.3).powi(2) + 0.1 * u.powi(4), 2.0 * (u - 0.3) + 0.4 * u.powi(3)),
            lower: [-3.0],
            upper: [3.0],
        };
        let mut rng = stream(5, 0, Purpose::Generic);
        let r = multistart_solve(&p, 5, &BoxSampler { lower: &p.lower, upper: &p.upper }, &mut rng, &SolverOptions::default()).unwrap();
        let conv: Vec<f64> = r.solutions.iter().filter(|s| s.status == SolveStatus::Converged).map(|s| s.point[0]).collect();
        assert_eq!(conv.len(), 5);
        for c in &conv {
            assert!((c - r.best.point[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn multimodal_best_dominates_subsets() {
        let p = Scalar {
            f: |u| ((3.0 * u).sin() + 0.1 * u * u, 3.0 * (3.0 * u).cos() + 0.2 * u),
            lower: [-5.0],
            upper: [5.0],
        };
        let mut rng = stream(6, 0, Purpose::Generic);
        let starts = latin_hypercube(40, &p.lower, &p.upper, &mut rng);
        let all = multistart_from(&p, &starts, &SolverOptions::default()).unwrap();
        for chunk in starts.chunks(10) {
            let sub = multistart_from(&p, chunk, &SolverOptions::default()).unwrap();
            assert!(all.best.objective <= sub.best.objective);
        }
    }

    #[test]
    fn no_starts_is_an_error() {
        let p = Scalar { f: |u| (u, 1.0), lower: [0.0], upper: [1.0] };
        assert!(matches!(multistart_from(&p, &[], &SolverOptions::default()), Err(MultistartError::NoStarts)));
    }

    #[test]
    fn unevaluable_problem_reports_statuses() {
        let p = Scalar { f: |_| (f64::NAN, f64::NAN), lower: [0.0], upper: [1.0] };
        match multistart_from(&p, &[vec![0.2], vec![0.7]], &SolverOptions::default()) {
            Err(MultistartError::NoConvergedStart { statuses }) => assert_eq!(statuses.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
