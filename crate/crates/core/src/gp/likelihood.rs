use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::data::TrainingSet;
use super::kernel::{Kernel, KernelHyperparams};
use super::GpError;

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

pub(crate) fn kernel_matrix(inputs: &[Vec<f64>], h: &KernelHyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let k = h.kernel();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = k.covariance(&inputs[i], &inputs[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Cholesky factor of `K + (noise + jitter)·I`. Jitter starts at zero, then
/// doubles from [`JITTER_START`] until the factorization succeeds or exceeds
/// [`JITTER_MAX`]. Returns the factor and the jitter that was added.
pub(crate) fn factorize(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok((c, jitter));
            }
        }
        jitter = if jitter == 0.0 { JITTER_START } else { 2.0 * jitter };
        if jitter > JITTER_MAX {
            return Err(GpError::NotPositiveDefinite { max_jitter: JITTER_MAX });
        }
    }
}

fn value_from(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let value = -0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    (value, alpha)
}

/// Log marginal likelihood of the standardized labels.
pub fn log_marginal_likelihood(data: &TrainingSet, h: &KernelHyperparams) -> Result<f64, GpError> {
    let k = kernel_matrix(data.inputs(), h);
    let (chol, _) = factorize(&k, h.noise_variance)?;
    Ok(value_from(&chol, &DVector::from_column_slice(data.labels())).0)
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln ℓ_1, …, ln ℓ_D, ln σ²]` (noise held fixed).
pub fn log_marginal_likelihood_and_gradient(
    data: &TrainingSet,
    h: &KernelHyperparams,
) -> Result<(f64, Vec<f64>), GpError> {
    let x = data.inputs();
    let (n, dim) = (x.len(), data.dim());
    let k = kernel_matrix(x, h);
    let (chol, _) = factorize(&k, h.noise_variance)?;
    let (value, alpha) = value_from(&chol, &DVector::from_column_slice(data.labels()));
    let kinv = chol.inverse();

    // ∂L/∂θ = ½ Σ_ij (α_i α_j − K⁻¹_ij) ∂K_ij/∂θ
    let mut grad = vec![0.0; dim + 1];
    let kern = h.kernel();
    for i in 0..n {
        let wii = alpha[i] * alpha[i] - kinv[(i, i)];
        grad[dim] += 0.5 * wii * h.signal_variance;
        for j in 0..i {
            // off-diagonal terms appear twice
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            grad[dim] += w * k[(i, j)];
            let r = kern.scaled_distance(&x[i], &x[j]);
            let c = kern.derivative_factor(r);
            for d in 0..dim {
                let t = (x[i][d] - x[j][d]) / h.lengthscales[d];
                grad[d] += w * c * t * t;
            }
        }
    }
    Ok((value, grad))
}
