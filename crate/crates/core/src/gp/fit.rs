use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::kernel::KernelHyperparams;
use super::likelihood::log_marginal_likelihood_and_gradient;
use super::GpError;
use crate::nlp::{latin_hypercube, minimize_box, BoxOptions, BoxStatus};
use crate::rng::Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_starts: usize,
    /// Fixed observation noise in standardized label units.
    pub noise_variance: f64,
    pub log_lengthscale_bounds: (f64, f64),
    pub log_signal_variance_bounds: (f64, f64),
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_starts: 100,
            noise_variance: 1e-8,
            log_lengthscale_bounds: (-5.0, 5.0),
            log_signal_variance_bounds: (-6.0, 6.0),
            max_iter: 200,
        }
    }
}

/// Outcome of one likelihood-maximization start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartDiagnostic {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub log_likelihood: f64,
    pub pg_norm: f64,
    pub status: BoxStatus,
}

impl StartDiagnostic {
    fn converged(&self) -> bool {
        // A failed line search at a near-stationary point is round-off, not divergence.
        let stalled_at_optimum =
            self.status == BoxStatus::LineSearchFailed && self.pg_norm <= 1e-4 * (1.0 + self.log_likelihood.abs());
        self.log_likelihood.is_finite()
            && (stalled_at_optimum
                || matches!(self.status, BoxStatus::Converged | BoxStatus::SmallDecrease | BoxStatus::MaxIterations))
    }
}

/// Maximize the log marginal likelihood over log-hyperparameters from
/// `opts.n_starts` Latin hypercube starts. Returns standardized-unit values.
pub fn fit_hyperparameters(data: &TrainingSet, opts: &FitOptions, rng: &mut Rng) -> Result<KernelHyperparams, GpError> {
    if data.len() < 2 {
        return Err(GpError::TooFewPoints { found: data.len() });
    }
    let dim = data.dim();
    let mut lower = vec![opts.log_lengthscale_bounds.0; dim];
    let mut upper = vec![opts.log_lengthscale_bounds.1; dim];
    lower.push(opts.log_signal_variance_bounds.0);
    upper.push(opts.log_signal_variance_bounds.1);
    let starts = latin_hypercube(opts.n_starts.max(1), &lower, &upper, rng);
    let box_opts = BoxOptions { max_iter: opts.max_iter, pg_tol: 1e-5, f_rel_tol: 1e-12, ..BoxOptions::default() };

    let diagnostics: Vec<StartDiagnostic> = starts
        .par_iter()
        .map(|x0| {
            let res = minimize_box(
                |theta, g| {
                    let h = KernelHyperparams::from_log_params(theta, opts.noise_variance);
                    match log_marginal_likelihood_and_gradient(data, &h) {
                        Ok((v, grad)) => {
                            if let Some(g) = g {
                                for (gi, di) in g.iter_mut().zip(&grad) {
                                    *gi = -di;
                                }
                            }
                            -v
                        }
                        Err(_) => f64::NAN,
                    }
                },
                x0,
                &lower,
                &upper,
                &box_opts,
            );
            StartDiagnostic { start: x0.clone(), end: res.x, log_likelihood: -res.f, pg_norm: res.pg_norm, status: res.status }
        })
        .collect();

    let best = diagnostics
        .iter()
        .filter(|d| d.converged())
        .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood).then_with(|| lex(&b.end, &a.end)));
    match best {
        Some(d) => Ok(KernelHyperparams::from_log_params(&d.end, opts.noise_variance)),
        None => Err(GpError::FitFailed { diagnostics }),
    }
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}
