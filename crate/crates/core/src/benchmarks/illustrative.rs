use std::sync::OnceLock;

use rayon::prelude::*;

use super::{check_box, golden_section, Benchmark, BenchmarkError, Observation, Optimum};
use crate::model::HybridModel;
use crate::nlp::solve_bracketed;

const MODEL: &str = include_str!("../../data/illustrative.toml");

const U_LOWER: f64 = -2.0;
const U_UPPER: f64 = 2.0;
const GRID_POINTS: usize = 1_000_000;

/// Hidden relation `y = h(u)` of the illustrative problem.
pub fn illustrative_oracle(u: f64) -> f64 {
    u.sin()
}

/// Forrester test function `(6x − 2)² sin(12x − 4)`.
pub fn forrester(x: f64) -> f64 {
    (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
}

/// The unique `x` with `x + eˣ = y`.
pub fn illustrative_state(y: f64) -> f64 {
    // x ≤ y since eˣ > 0, and x ≥ y − e^y since eˣ ≤ e^y.
    solve_bracketed(|x| x + x.exp() - y, y - y.exp(), y, 1e-15).expect("x + exp(x) is monotone")
}

fn chain(u: f64) -> f64 {
    forrester(illustrative_state(illustrative_oracle(u)))
}

/// Best point of the uniform `GRID_POINTS` grid over the decision box.
pub(crate) fn grid_optimum() -> (f64, f64) {
    let step = (U_UPPER - U_LOWER) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .into_par_iter()
        .map(|i| {
            let u = U_LOWER + step * i as f64;
            (chain(u), u)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap()
}

fn optimum() -> Optimum {
    static CACHE: OnceLock<Optimum> = OnceLock::new();
    CACHE.get_or_init(|| {
        let (f_grid, u_grid) = grid_optimum();
        let step = (U_UPPER - U_LOWER) / (GRID_POINTS - 1) as f64;
        let a = (u_grid - step).max(U_LOWER);
        let b = (u_grid + step).min(U_UPPER);
        let (u, f) = golden_section(chain, a, b, 1e-13);
        if f < f_grid {
            Optimum { value: f, u: vec![u] }
        } else {
            Optimum { value: f_grid, u: vec![u_grid] }
        }
    })
    .clone()
}

/// One decision `u ∈ [−2, 2]`, state `x` from `x + eˣ = y`, Forrester
/// objective in `x`, and `y = sin(u)` unknown to the optimizer.
pub struct Illustrative {
    model: HybridModel,
}

impl Illustrative {
    pub fn new() -> Result<Self, BenchmarkError> {
        Ok(Illustrative { model: HybridModel::from_toml(MODEL, &[])? })
    }
}

impl Benchmark for Illustrative {
    fn name(&self) -> &str {
        "illustrative"
    }

    fn model(&self) -> &HybridModel {
        &self.model
    }

    fn observe(&self, u: &[f64]) -> Result<Observation, BenchmarkError> {
        check_box(&self.model, u)?;
        Ok(Observation::Feasible(vec![illustrative_oracle(u[0])]))
    }

    fn true_objective(&self, u: &[f64]) -> Result<Option<f64>, BenchmarkError> {
        check_box(&self.model, u)?;
        Ok(Some(chain(u[0])))
    }

    fn optimum(&self) -> Optimum {
        optimum()
    }
}
