//! Case-study oracles: the in-silico experiments a BO loop queries, with their
//! hybrid model definitions and reference optima.

mod flash;
mod illustrative;

use thiserror::Error;

pub use flash::{
    antoine_psat, nrtl_ln_gamma1, AntoineParams, Flash, FlashOutcome, FlashState, NrtlParams, ThermoError, ThermoParams,
};
pub use illustrative::{forrester, illustrative_oracle, illustrative_state, Illustrative};

use crate::model::{HybridModel, ModelError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("unknown benchmark `{0}` (expected `illustrative` or `flash`)")]
    Unknown(String),
    #[error("decision {0:?} outside the benchmark box")]
    OutOfBounds(Vec<f64>),
    #[error("simulation failed at {u:?}: {reason}")]
    Simulation { u: Vec<f64>, reason: String },
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Outcome of running one trial on the true system.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Values of the model's measured variables, in measurement order and SI units.
    Feasible(Vec<f64>),
    Infeasible,
}

/// Synthetic GP training record standing in for an infeasible trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub regressors: Vec<f64>,
    pub labels: Vec<f64>,
    pub rule: String,
}

/// Global optimum of a benchmark over its decision box.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub value: f64,
    pub u: Vec<f64>,
}

pub trait Benchmark: Sync {
    fn name(&self) -> &str;

    fn model(&self) -> &HybridModel;

    /// Run the experiment at `u` and report the measured variables.
    fn observe(&self, u: &[f64]) -> Result<Observation, BenchmarkError>;

    /// Objective of the true system at `u`, `None` where infeasible.
    fn true_objective(&self, u: &[f64]) -> Result<Option<f64>, BenchmarkError>;

    /// Reference optimum `f*` used for regret.
    fn optimum(&self) -> Optimum;

    /// Objective label given to an infeasible trial when the GP models the
    /// objective directly.
    fn infeasible_penalty(&self, _u: &[f64]) -> Option<f64> {
        None
    }

    /// GP record for an infeasible trial in the hybrid setting.
    fn impute(&self, _u: &[f64], _rng: &mut Rng) -> Option<Imputed> {
        None
    }
}

/// Look up a shipped benchmark by name.
pub fn by_name(name: &str) -> Result<Box<dyn Benchmark>, BenchmarkError> {
    match name {
        "illustrative" => Ok(Box::new(Illustrative::new()?)),
        "flash" => Ok(Box::new(Flash::new()?)),
        other => Err(BenchmarkError::Unknown(other.to_string())),
    }
}

pub(crate) fn check_box(model: &HybridModel, u: &[f64]) -> Result<(), BenchmarkError> {
    let sp = &model.space;
    let inside = u.len() == sp.nu()
        && sp.decisions.iter().zip(u).all(|(v, x)| x.is_finite() && *x >= v.lower && *x <= v.upper);
    if inside {
        Ok(())
    } else {
        Err(BenchmarkError::OutOfBounds(u.to_vec()))
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry() {
        assert_eq!(by_name("illustrative").unwrap().name(), "illustrative");
        assert_eq!(by_name("flash").unwrap().name(), "flash");
        assert!(matches!(by_name("branin"), Err(BenchmarkError::Unknown(_))));
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2) + 1.0, -1.0, 2.0, 1e-10);
        // a flat minimum is only resolved to about sqrt(machine epsilon)
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
    }
}
