//! Gaussian-process regression with a Matérn-5/2 ARD kernel and zero prior
//! mean on standardized data.
//!
//! Multi-output models are stacks of independent scalar GPs, so the
//! reparameterized draw is `y = μ(q) + diag(σ(q))·ξ`.

mod data;
mod fit;
mod kernel;
mod likelihood;
mod posterior;

use thiserror::Error;

pub use data::{Standardization, TrainingSet};
pub use fit::{fit_hyperparameters, FitOptions, StartDiagnostic};
pub use kernel::{matern52, Kernel, KernelHyperparams, Matern52};
pub use likelihood::{log_marginal_likelihood, log_marginal_likelihood_and_gradient, JITTER_MAX, JITTER_START};
pub use posterior::{GpPosterior, GpSummary, Prediction, VARIANCE_FLOOR};

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("training set is empty")]
    Empty,
    #[error("training data contain non-finite values")]
    NonFinite,
    #[error("need at least two distinct points to fit hyperparameters, found {found}")]
    TooFewPoints { found: usize },
    #[error("kernel matrix not positive definite with jitter up to {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("no hyperparameter start converged ({} tried)", diagnostics.len())]
    FitFailed { diagnostics: Vec<StartDiagnostic> },
}

/// Independent scalar GPs sharing one input space.
#[derive(Debug, Clone)]
pub struct MultiOutputGp {
    pub outputs: Vec<GpPosterior>,
}

impl MultiOutputGp {
    /// Fit one GP per label column with a shared input matrix.
    pub fn fit(
        inputs: &[Vec<f64>],
        labels: &[Vec<f64>],
        standardize: &[bool],
        opts: &FitOptions,
        rng: &mut Rng,
    ) -> Result<Self, GpError> {
        let outputs = labels
            .iter()
            .map(|col| GpPosterior::fit(TrainingSet::new(inputs, col, standardize)?, opts, rng))
            .collect::<Result<_, _>>()?;
        Ok(MultiOutputGp { outputs })
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.outputs[0].dim()
    }

    pub fn predict(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.outputs.iter().map(|g| g.predict(q)).unzip()
    }

    pub fn predict_with_gradient(&self, q: &[f64]) -> Vec<Prediction> {
        self.outputs.iter().map(|g| g.predict_with_gradient(q)).collect()
    }

    /// `y = μ(q) + diag(σ(q))·ξ`.
    pub fn reparameterized_draw(&self, q: &[f64], xi: &[f64]) -> Vec<f64> {
        assert_eq!(xi.len(), self.outputs.len(), "ξ dimension");
        self.outputs
            .iter()
            .zip(xi)
            .map(|(g, x)| {
                let (m, s) = g.predict(q);
                m + s * x
            })
            .collect()
    }

    pub fn summaries(&self) -> Vec<GpSummary> {
        self.outputs.iter().map(GpPosterior::summary).collect()
    }
}
