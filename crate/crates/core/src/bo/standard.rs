use rayon::prelude::*;
use statrs::function::erf::erfc;

use super::{best_probe, BoError, ExperimentState, Proposal, Provenance};
use crate::benchmarks::Benchmark;
use crate::gp::MultiOutputGp;
use crate::nlp::{latin_hypercube, minimize_box, BoxOptions};
use crate::rng::{stream, Purpose, Rng};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// EI for minimization, `E[max(0, f′ − Y)]` with `Y ~ N(μ, σ²)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_prime: f64) -> f64 {
    ei_with_partials(mu, sigma, f_prime).0
}

/// EI with `∂/∂μ` and `∂/∂σ`.
fn ei_with_partials(mu: f64, sigma: f64, f_prime: f64) -> (f64, f64, f64) {
    let d = f_prime - mu;
    if sigma <= 0.0 {
        return (d.max(0.0), if d > 0.0 { -1.0 } else { 0.0 }, 0.0);
    }
    let z = d / sigma;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    ((d * cdf + sigma * pdf).max(0.0), -cdf, pdf)
}

/// Objective-surrogate acquisition: a GP on `u ↦ f` (penalty labels for
/// infeasible trials) scored by EI, or by the posterior mean while no
/// feasible incumbent exists.
pub struct StandardAcquisition {
    pub gp: MultiOutputGp,
    pub incumbent: Option<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StandardAcquisition {
    pub fn fit(bench: &dyn Benchmark, state: &ExperimentState, k: usize) -> Result<Self, BoError> {
        let mut inputs = Vec::with_capacity(state.records.len());
        let mut labels = Vec::with_capacity(state.records.len());
        for r in &state.records {
            let label = if r.feasible { r.objective } else { r.penalty };
            let label = label.ok_or_else(|| BoError::NoInfeasibleRule(state.benchmark.clone()))?;
            inputs.push(r.u.clone());
            labels.push(label);
        }
        let sp = &bench.model().space;
        let gp = MultiOutputGp::fit(
            &inputs,
            &[labels],
            &vec![true; sp.nu()],
            &state.settings.fit_options(),
            &mut stream(state.seed, k as u64, Purpose::GpFit),
        )?;
        Ok(StandardAcquisition { gp, incumbent: state.incumbent, lower: sp.decision_lower(), upper: sp.decision_upper() })
    }

    /// EI at `u`, or the posterior mean when there is no incumbent.
    pub fn value(&self, u: &[f64]) -> f64 {
        let (m, s) = self.gp.outputs[0].predict(u);
        match self.incumbent {
            Some(fp) => expected_improvement(m, s, fp),
            None => m,
        }
    }

    /// Quantity minimized over the box: `−EI` or `μ`, with its gradient in `u`.
    fn score(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = self.gp.outputs[0].predict_with_gradient(u);
        let (v, dm, ds) = match self.incumbent {
            Some(fp) => {
                let (ei, dm, ds) = ei_with_partials(p.mean, p.std, fp);
                (-ei, -dm, -ds)
            }
            None => (p.mean, 1.0, 0.0),
        };
        if let Some(g) = grad {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj = dm * p.dmean[j] + ds * p.dstd[j];
            }
        }
        v
    }

    pub(super) fn propose(&self, n_starts: usize, rng: &mut Rng) -> Proposal {
        let n = self.lower.len();
        let width: Vec<f64> = self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect();
        let to_u = |w: &[f64]| -> Vec<f64> { (0..n).map(|j| (self.lower[j] + width[j] * w[j]).clamp(self.lower[j], self.upper[j])).collect() };
        let probes = latin_hypercube(n_starts, &self.lower, &self.upper, rng);
        let (zero, one) = (vec![0.0; n], vec![1.0; n]);
        let opts = BoxOptions { pg_tol: 1e-9, max_iter: 200, ..Default::default() };
        let results: Vec<(f64, Vec<f64>)> = probes
            .par_iter()
            .map(|u0| {
                let w0: Vec<f64> = (0..n).map(|j| (u0[j] - self.lower[j]) / width[j]).collect();
                let res = minimize_box(
                    |w: &[f64], g: Option<&mut [f64]>| {
                        let u = to_u(w);
                        match g {
                            Some(g) => {
                                let v = self.score(&u, Some(g));
                                g.iter_mut().zip(&width).for_each(|(gj, wj)| *gj *= wj);
                                v
                            }
                            None => self.score(&u, None),
                        }
                    },
                    &w0,
                    &zero,
                    &one,
                    &opts,
                );
                (res.f, to_u(&res.x))
            })
            .collect();
        let best = results
            .iter()
            .enumerate()
            .filter(|(_, r)| r.0.is_finite())
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .map(|(_, r)| r.clone());
        let plateau = self.incumbent.is_some() && best.as_ref().is_none_or(|b| b.0 >= 0.0);
        match best {
            Some((v, u)) if !plateau => {
                Proposal { value: Some(if self.incumbent.is_some() { -v } else { v }), u, provenance: Provenance::Acquisition, note: None }
            }
            _ => {
                let (v, u) = best_probe(&probes, |u| Some(self.score(u, None)));
                let value = v.map(|v| if self.incumbent.is_some() { -v } else { v });
                Proposal { u, provenance: Provenance::Fallback, value, note: Some("EI is zero at every start".into()) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn deterministic_limits() {
        assert!((expected_improvement(1.0, 1e-12, 3.0) - 2.0).abs() < 1e-12);
        assert_eq!(expected_improvement(3.0, 1e-12, 1.0), 0.0);
        assert_eq!(expected_improvement(3.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(1.0, 0.0, 3.0), 2.0);
    }

    #[test]
    fn matches_monte_carlo() {
        let mut rng = stream(41, 0, Purpose::Generic);
        for &(mu, sigma, fp) in &[(0.0_f64, 1.0_f64, 0.5_f64), (2.0, 0.7, 1.5), (-1.0, 2.5, -0.5), (0.3, 0.1, 0.35)] {
            let dist = Normal::new(mu, sigma).unwrap();
            let n = 1_000_000;
            let mc = (0..n).map(|_| (fp - dist.sample(&mut rng)).max(0.0_f64)).sum::<f64>() / n as f64;
            let ei = expected_improvement(mu, sigma, fp);
            assert!((ei - mc).abs() / ei < 1e-2, "{ei} vs {mc}");
        }
    }

    #[test]
    fn partials_match_differences() {
        for &(mu, sigma, fp) in &[(0.0, 1.0, 0.5), (2.0, 0.7, 1.5), (-1.0, 2.5, -0.5)] {
            let (_, dm, ds) = ei_with_partials(mu, sigma, fp);
            let h = 1e-6;
            let fdm = (expected_improvement(mu + h, sigma, fp) - expected_improvement(mu - h, sigma, fp)) / (2.0 * h);
            let fds = (expected_improvement(mu, sigma + h, fp) - expected_improvement(mu, sigma - h, fp)) / (2.0 * h);
            assert!((dm - fdm).abs() < 1e-7 && (ds - fds).abs() < 1e-7);
        }
    }
}
