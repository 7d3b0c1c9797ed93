use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{Standardization, TrainingSet};
use super::fit::{fit_hyperparameters, FitOptions};
use super::kernel::{Kernel, KernelHyperparams};
use super::likelihood::{factorize, kernel_matrix, log_marginal_likelihood};
use super::GpError;
use crate::rng::Rng;

/// Lower bound on the standardized posterior variance.
pub const VARIANCE_FLOOR: f64 = 1e-10;
const FLOOR_WIDTH: f64 = 1e-12;

/// `½(a + b + √((a − b)² + w²))` and its derivative in `a`.
fn smooth_max(a: f64, b: f64) -> (f64, f64) {
    let s = ((a - b).powi(2) + FLOOR_WIDTH * FLOOR_WIDTH).sqrt();
    (0.5 * (a + b + s), 0.5 * (1.0 + (a - b) / s))
}

/// Posterior mean and standard deviation at one query, plus input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
    pub dmean: Vec<f64>,
    pub dstd: Vec<f64>,
}

/// Scalar GP conditioned on a training set. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    hyper: KernelHyperparams,
    data: TrainingSet,
    /// Lower-triangular factor of `K + (noise + jitter)·I`, column-major.
    factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Serializable summary of a fitted GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub hyperparams: KernelHyperparams,
    pub standardization: Standardization,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
}

impl GpPosterior {
    /// Condition on `data` with fixed hyperparameters (standardized units).
    pub fn new(data: TrainingSet, hyper: KernelHyperparams) -> Result<Self, GpError> {
        if hyper.lengthscales.len() != data.dim() {
            return Err(GpError::Dimension { expected: data.dim(), found: hyper.lengthscales.len() });
        }
        let k = kernel_matrix(data.inputs(), &hyper);
        let (chol, jitter) = factorize(&k, hyper.noise_variance)?;
        let alpha = chol.solve(&DVector::from_column_slice(data.labels()));
        Ok(GpPosterior { factor: chol.unpack(), alpha, jitter, hyper, data })
    }

    /// Maximum-likelihood fit followed by conditioning.
    pub fn fit(data: TrainingSet, opts: &FitOptions, rng: &mut Rng) -> Result<Self, GpError> {
        let hyper = fit_hyperparameters(&data, opts, rng)?;
        Self::new(data, hyper)
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyper
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.data
    }

    pub fn lower_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn summary(&self) -> GpSummary {
        GpSummary {
            hyperparams: self.hyper.clone(),
            standardization: self.data.standardization().clone(),
            jitter: self.jitter,
            log_marginal_likelihood: log_marginal_likelihood(&self.data, &self.hyper).unwrap_or(f64::NAN),
        }
    }

    /// Solve `L v = k` in place.
    fn forward(&self, v: &mut [f64]) {
        let l = &self.factor;
        let n = v.len();
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= l[(i, j)] * v[j];
            }
            v[i] = s / l[(i, i)];
        }
    }

    /// Solve `Lᵀ w = v` in place.
    fn backward(&self, v: &mut [f64]) {
        let l = &self.factor;
        let n = v.len();
        for i in (0..n).rev() {
            let mut s = v[i];
            for j in i + 1..n {
                s -= l[(j, i)] * v[j];
            }
            v[i] = s / l[(i, i)];
        }
    }

    fn standardized_query(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.dim(), "query dimension");
        let mut qs = vec![0.0; q.len()];
        self.data.standardization().input(q, &mut qs);
        qs
    }

    /// Posterior mean and standard deviation in raw label units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let qs = self.standardized_query(q);
        let kern = self.hyper.kernel();
        let mut v: Vec<f64> = self.data.inputs().iter().map(|x| kern.covariance(&qs, x)).collect();
        let mean_s: f64 = v.iter().zip(self.alpha.iter()).map(|(k, a)| k * a).sum();
        self.forward(&mut v);
        let var = self.hyper.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        let (var, _) = smooth_max(var, VARIANCE_FLOOR);
        let s = self.data.standardization();
        (s.unlabel(mean_s), s.label_scale * var.sqrt())
    }

    /// Mean, standard deviation and their gradients with respect to the raw query.
    pub fn predict_with_gradient(&self, q: &[f64]) -> Prediction {
        let qs = self.standardized_query(q);
        let (n, dim) = (self.data.len(), self.dim());
        let kern = self.hyper.kernel();
        let mut kvec = vec![0.0; n];
        let mut dk = vec![0.0; n * dim];
        for (i, x) in self.data.inputs().iter().enumerate() {
            kvec[i] = kern.covariance_grad(&qs, x, &mut dk[i * dim..(i + 1) * dim]);
        }
        let mean_s: f64 = kvec.iter().zip(self.alpha.iter()).map(|(k, a)| k * a).sum();
        let mut w = kvec;
        self.forward(&mut w);
        let var_raw = self.hyper.signal_variance - w.iter().map(|x| x * x).sum::<f64>();
        self.backward(&mut w); // now K⁻¹k

        let (var, dvar_floor) = smooth_max(var_raw, VARIANCE_FLOOR);
        let sd = var.sqrt();
        let s = self.data.standardization();
        let mut dmean = vec![0.0; dim];
        let mut dstd = vec![0.0; dim];
        for d in 0..dim {
            let mut dm = 0.0;
            let mut dv = 0.0;
            for i in 0..n {
                dm += self.alpha[i] * dk[i * dim + d];
                dv -= 2.0 * w[i] * dk[i * dim + d];
            }
            let chain = s.label_scale / s.input_scale[d];
            dmean[d] = chain * dm;
            dstd[d] = chain * 0.5 * dvar_floor * dv / sd;
        }
        Prediction { mean: s.unlabel(mean_s), std: s.label_scale * sd, dmean, dstd }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng as _;

    fn toy(noise: f64) -> GpPosterior {
        let x: Vec<Vec<f64>> = vec![vec![-1.5, 0.2], vec![-0.4, 0.9], vec![0.3, 0.1], vec![1.1, 0.5], vec![1.8, 0.8]];
        let y: Vec<f64> = x.iter().map(|r| (2.0 * r[0]).sin() + r[1] * r[1]).collect();
        let ts = TrainingSet::new(&x, &y, &[true, false]).unwrap();
        GpPosterior::new(ts, KernelHyperparams { signal_variance: 1.4, lengthscales: vec![0.8, 0.6], noise_variance: noise }).unwrap()
    }

    #[test]
    fn interpolates_training_points() {
        let gp = toy(1e-8);
        let x: Vec<Vec<f64>> = vec![vec![-1.5, 0.2], vec![-0.4, 0.9], vec![0.3, 0.1], vec![1.1, 0.5], vec![1.8, 0.8]];
        for r in &x {
            let y = (2.0 * r[0]).sin() + r[1] * r[1];
            let (m, s) = gp.predict(r);
            assert!((m - y).abs() <= 1e-6 * (1.0 + y.abs()), "{m} vs {y}");
            let scale = gp.training_set().standardization().label_scale;
            let floor = scale * 1e-8f64.sqrt();
            assert!(s <= 2.0 * floor && s >= floor / 2.0, "{s} vs {floor}");
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let gp = toy(1e-8);
        let (m, s) = gp.predict(&[1e4, 1e4]);
        let st = gp.training_set().standardization();
        assert!((m - st.label_mean).abs() < 1e-12);
        assert!((s - st.label_scale * 1.4f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn factor_reconstructs_kernel() {
        let gp = toy(1e-8);
        let l = gp.lower_factor();
        let mut k = kernel_matrix(gp.training_set().inputs(), gp.hyperparams());
        for i in 0..k.nrows() {
            k[(i, i)] += 1e-8 + gp.jitter();
            assert!(l[(i, i)] > 0.0);
        }
        let rec = l * l.transpose();
        assert!((rec - &k).norm() <= 1e-8 * k.norm());
    }

    #[test]
    fn gradients_match_central_differences() {
        let gp = toy(1e-8);
        let mut rng = stream(21, 0, Purpose::Generic);
        for _ in 0..20 {
            let q = [rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0)];
            let p = gp.predict_with_gradient(&q);
            let (m0, s0) = gp.predict(&q);
            assert_eq!((m0, s0), (p.mean, p.std));
            for d in 0..2 {
                let (mut qp, mut qm) = (q, q);
                qp[d] += 1e-6;
                qm[d] -= 1e-6;
                let (mp, sp) = gp.predict(&qp);
                let (mm, sm) = gp.predict(&qm);
                let (fm, fs) = ((mp - mm) / 2e-6, (sp - sm) / 2e-6);
                assert!((fm - p.dmean[d]).abs() <= 1e-5 * fm.abs().max(1e-2), "mean {d}: {fm} vs {}", p.dmean[d]);
                assert!((fs - p.dstd[d]).abs() <= 1e-5 * fs.abs().max(1e-2), "std {d}: {fs} vs {}", p.dstd[d]);
            }
        }
    }
}
