use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How scenario objectives `f_1..f_S` are folded into one acquisition value
/// (to be minimized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionKind {
    /// `(1/S) Σ f_s`
    Mean,
    /// `(1/S) Σ min(0, f_s − f′)`
    SaaEi,
    /// `(1/2S) Σ (d_s − √(d_s² + ε))`, `d_s = f_s − f′`
    SmoothEiSqrt,
    /// `(1/S) Σ −ln(1 + exp(−d_s))`
    SmoothEiSoftplus,
    /// `μ̂ − β σ̂` with the unbiased sample variance
    SaaLcb,
}

impl AcquisitionKind {
    pub fn needs_incumbent(self) -> bool {
        matches!(self, Self::SaaEi | Self::SmoothEiSqrt | Self::SmoothEiSoftplus)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::SaaEi => "saa-ei",
            Self::SmoothEiSqrt => "smooth-ei-sqrt",
            Self::SmoothEiSoftplus => "smooth-ei-softplus",
            Self::SaaLcb => "saa-lcb",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcquisitionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "mean" => Self::Mean,
            "saa-ei" => Self::SaaEi,
            "smooth-ei-sqrt" => Self::SmoothEiSqrt,
            "smooth-ei-softplus" => Self::SmoothEiSoftplus,
            "saa-lcb" | "lcb" => Self::SaaLcb,
            other => return Err(format!("unknown acquisition kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    /// Best feasible objective so far; required by the EI kinds.
    pub incumbent: Option<f64>,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        AcquisitionParams { incumbent: None, beta: 2.0, epsilon: 1e-6 }
    }
}

/// Acquisition value from scenario objectives. When `weights` is given it
/// receives `∂A/∂f_s`.
pub fn combine(kind: AcquisitionKind, params: &AcquisitionParams, f: &[f64], weights: Option<&mut [f64]>) -> f64 {
    let s = f.len() as f64;
    let fp = params.incumbent.unwrap_or(f64::NAN);
    let mut w_buf;
    let w: &mut [f64] = match weights {
        Some(w) => w,
        None => {
            w_buf = vec![0.0; f.len()];
            &mut w_buf
        }
    };
    match kind {
        AcquisitionKind::Mean => {
            w.iter_mut().for_each(|v| *v = 1.0 / s);
            f.iter().sum::<f64>() / s
        }
        AcquisitionKind::SaaEi => {
            let mut acc = 0.0;
            for (wi, fi) in w.iter_mut().zip(f) {
                let d = fi - fp;
                if d < 0.0 {
                    acc += d;
                    *wi = 1.0 / s;
                } else {
                    *wi = 0.0;
                }
            }
            acc / s
        }
        AcquisitionKind::SmoothEiSqrt => {
            let eps = params.epsilon;
            let mut acc = 0.0;
            for (wi, fi) in w.iter_mut().zip(f) {
                let d = fi - fp;
                let r = (d * d + eps).sqrt();
                acc += d - r;
                *wi = 0.5 * (1.0 - d / r) / s;
            }
            acc / (2.0 * s)
        }
        AcquisitionKind::SmoothEiSoftplus => {
            let mut acc = 0.0;
            for (wi, fi) in w.iter_mut().zip(f) {
                let d = fi - fp;
                // −ln(1 + e^{−d}) computed without overflow
                acc -= if d > 0.0 { (-d).exp().ln_1p() } else { -d + d.exp().ln_1p() };
                *wi = 1.0 / (s * (1.0 + d.exp()));
            }
            acc / s
        }
        AcquisitionKind::SaaLcb => {
            let mean = f.iter().sum::<f64>() / s;
            let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
            let sd = var.sqrt();
            for (wi, fi) in w.iter_mut().zip(f) {
                let dsd = if sd > 0.0 { (fi - mean) / ((s - 1.0) * sd) } else { 0.0 };
                *wi = 1.0 / s - params.beta * dsd;
            }
            mean - params.beta * sd
        }
    }
}
