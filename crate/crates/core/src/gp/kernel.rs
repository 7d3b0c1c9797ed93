use serde::{Deserialize, Serialize};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Stationary covariance function with input gradients.
pub trait Kernel: Sync {
    fn covariance(&self, a: &[f64], b: &[f64]) -> f64;
    /// Returns `k(a, b)` and writes `∂k/∂a` into `grad`.
    fn covariance_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64;
}

/// Hyperparameters of the anisotropic Matérn-5/2 kernel plus observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    /// `[ln ℓ_1, …, ln ℓ_D, ln σ²]`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v
    }

    pub fn from_log_params(theta: &[f64], noise_variance: f64) -> Self {
        let d = theta.len() - 1;
        KernelHyperparams {
            signal_variance: theta[d].exp(),
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            noise_variance,
        }
    }

    pub fn kernel(&self) -> Matern52<'_> {
        Matern52 {
            signal_variance: self.signal_variance,
            lengthscales: &self.lengthscales,
        }
    }
}

/// `k(r) = σ² (1 + √5 r + 5r²/3) exp(−√5 r)` with
/// `r² = Σ_d (a_d − b_d)² / ℓ_d²`.
#[derive(Debug, Clone, Copy)]
pub struct Matern52<'a> {
    pub signal_variance: f64,
    pub lengthscales: &'a [f64],
}

impl Matern52<'_> {
    pub(crate) fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(self.lengthscales)
            .map(|((x, y), l)| {
                let t = (x - y) / l;
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `σ²(1 + √5 r) exp(−√5 r)·5/3`, the common factor of all first derivatives.
    pub(crate) fn derivative_factor(&self, r: f64) -> f64 {
        self.signal_variance * (5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
    }
}

impl Kernel for Matern52<'_> {
    fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.scaled_distance(a, b);
        self.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
    }

    fn covariance_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.scaled_distance(a, b);
        let c = self.derivative_factor(r);
        for (((g, x), y), l) in grad.iter_mut().zip(a).zip(b).zip(self.lengthscales) {
            *g = -c * (x - y) / (l * l);
        }
        self.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
    }
}

/// Matérn-5/2 covariance with dimension checking.
pub fn matern52(a: &[f64], b: &[f64], h: &KernelHyperparams) -> Result<f64, super::GpError> {
    if a.len() != b.len() || a.len() != h.lengthscales.len() {
        return Err(super::GpError::Dimension {
            expected: h.lengthscales.len(),
            found: if a.len() != h.lengthscales.len() { a.len() } else { b.len() },
        });
    }
    Ok(h.kernel().covariance(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(sv: f64, ls: &[f64]) -> KernelHyperparams {
        KernelHyperparams { signal_variance: sv, lengthscales: ls.to_vec(), noise_variance: 0.0 }
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        assert_eq!(matern52(&[0.3, -1.0], &[0.3, -1.0], &hp(1.0, &[1.0, 2.0])).unwrap(), 1.0);
    }

    #[test]
    fn decays_to_zero() {
        assert!(matern52(&[0.0], &[1e3], &hp(1.0, &[1.0])).unwrap() < 1e-300);
    }

    #[test]
    fn unit_distance_matches_polynomial_times_exponential() {
        // Written out independently: k(1) = (1 + √5 + 5/3)·e^{−√5}.
        let s5 = 5f64.sqrt();
        let oracle = (8.0 / 3.0 + s5) / s5.exp();
        let v = matern52(&[0.0], &[1.0], &hp(1.0, &[1.0])).unwrap();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.523_994_108_831_820_3).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matern52(&[0.0, 1.0], &[1.0], &hp(1.0, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn input_gradient_matches_differences() {
        let h = hp(1.7, &[0.4, 2.5]);
        let k = h.kernel();
        let (a, b) = ([0.3, -0.8], [0.1, 0.4]);
        let mut g = [0.0; 2];
        k.covariance_grad(&a, &b, &mut g);
        for d in 0..2 {
            let mut ap = a;
            let mut am = a;
            ap[d] += 1e-6;
            am[d] -= 1e-6;
            let fd = (k.covariance(&ap, &b) - k.covariance(&am, &b)) / 2e-6;
            assert!((fd - g[d]).abs() <= 1e-6 * fd.abs().max(1e-3), "{d}: {fd} vs {}", g[d]);
        }
    }
}
