use serde::{Deserialize, Serialize};

use super::GpError;

/// Affine maps between raw and standardized inputs and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub label_mean: f64,
    pub label_scale: f64,
}

impl Standardization {
    pub fn input(&self, raw: &[f64], out: &mut [f64]) {
        for (((o, r), m), s) in out.iter_mut().zip(raw).zip(&self.input_mean).zip(&self.input_scale) {
            *o = (r - m) / s;
        }
    }

    pub fn label(&self, raw: f64) -> f64 {
        (raw - self.label_mean) / self.label_scale
    }

    pub fn unlabel(&self, standardized: f64) -> f64 {
        self.label_mean + self.label_scale * standardized
    }
}

/// Inputs and scalar labels for one GP output, stored standardized.
///
/// Rows whose standardized inputs coincide within 1e-12 are merged and their
/// labels averaged.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) labels: Vec<f64>,
    pub(crate) standardization: Standardization,
}

const MERGE_TOL: f64 = 1e-12;

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
    (mean, scale)
}

impl TrainingSet {
    /// `standardize[d]` selects whether input dimension `d` is centred and
    /// scaled; labels always are.
    pub fn new(inputs: &[Vec<f64>], labels: &[f64], standardize: &[bool]) -> Result<Self, GpError> {
        if inputs.is_empty() {
            return Err(GpError::Empty);
        }
        if inputs.len() != labels.len() {
            return Err(GpError::Dimension { expected: inputs.len(), found: labels.len() });
        }
        let dim = standardize.len();
        if let Some(row) = inputs.iter().find(|r| r.len() != dim) {
            return Err(GpError::Dimension { expected: dim, found: row.len() });
        }
        if inputs.iter().flatten().chain(labels).any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }

        let mut input_mean = vec![0.0; dim];
        let mut input_scale = vec![1.0; dim];
        for d in 0..dim {
            if standardize[d] {
                (input_mean[d], input_scale[d]) = mean_and_scale(inputs.iter().map(|r| r[d]));
            }
        }
        let mut std = Standardization { input_mean, input_scale, label_mean: 0.0, label_scale: 1.0 };

        let mut merged: Vec<(Vec<f64>, f64, usize)> = Vec::with_capacity(inputs.len());
        let mut buf = vec![0.0; dim];
        for (row, &y) in inputs.iter().zip(labels) {
            std.input(row, &mut buf);
            match merged
                .iter_mut()
                .find(|(x, _, _)| x.iter().zip(&buf).all(|(a, b)| (a - b).abs() <= MERGE_TOL))
            {
                Some((_, sum, count)) => {
                    *sum += y;
                    *count += 1;
                }
                None => merged.push((buf.clone(), y, 1)),
            }
        }
        let raw_labels: Vec<f64> = merged.iter().map(|(_, s, c)| s / *c as f64).collect();
        (std.label_mean, std.label_scale) = mean_and_scale(raw_labels.iter().copied());
        let labels = raw_labels.iter().map(|&y| std.label(y)).collect();
        let inputs = merged.into_iter().map(|(x, _, _)| x).collect();
        Ok(TrainingSet { inputs, labels, standardization: std })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.standardization.input_mean.len()
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Standardized input rows.
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Standardized labels.
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}
