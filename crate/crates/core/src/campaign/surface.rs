use rayon::prelude::*;

use super::{csv_writer, CampaignError};
use crate::benchmarks::Benchmark;
use crate::bo::{ExperimentState, HybridContext, StandardAcquisition};
use crate::scenario::AcquisitionKind;

/// Tensor grid with `n` points per axis, last axis fastest. A single point
/// per axis sits at the box center.
pub fn grid(lower: &[f64], upper: &[f64], n: usize) -> Vec<Vec<f64>> {
    let axis = |j: usize| -> Vec<f64> {
        if n == 1 {
            vec![0.5 * (lower[j] + upper[j])]
        } else {
            (0..n).map(|i| lower[j] + (upper[j] - lower[j]) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let axes: Vec<Vec<f64>> = (0..lower.len()).map(axis).collect();
    let mut points = vec![Vec::new()];
    for a in &axes {
        points = points.iter().flat_map(|p| a.iter().map(move |&v| [p.as_slice(), &[v]].concat())).collect();
    }
    points
}

/// Acquisition values on a decision grid for the iteration that would follow
/// a checkpointed state: SAA-EI of the hybrid model and analytic EI of the
/// objective GP, both fitted exactly as that iteration fits them.
#[derive(Debug, Clone)]
pub struct Surface {
    pub columns: Vec<String>,
    /// Presentation-unit factor of each column (`display = si / factor`).
    pub unit_factors: Vec<f64>,
    /// Grid points in SI units.
    pub points: Vec<Vec<f64>>,
    /// `None` where the scenario states cannot be solved.
    pub saa_ei: Vec<Option<f64>>,
    pub ei: Vec<f64>,
}

pub fn acquisition_surface(bench: &dyn Benchmark, state: &ExperimentState, n: usize) -> Result<Surface, CampaignError> {
    if state.incumbent.is_none() {
        return Err(CampaignError::NoIncumbent);
    }
    if n == 0 {
        return Err(CampaignError::Config("surface grid needs at least one point per axis".into()));
    }
    let k = state.iteration + 1;
    let sp = &bench.model().space;
    let ctx = HybridContext::fit(bench, state, k, AcquisitionKind::SaaEi)?;
    let nlp = ctx.nlp().map_err(crate::bo::BoError::from)?;
    let standard = StandardAcquisition::fit(bench, state, k)?;
    let points = grid(&sp.decision_lower(), &sp.decision_upper(), n);
    let saa_ei = points.par_iter().map(|u| nlp.reduced_objective(u).map(|v| -v)).collect();
    let ei = points.par_iter().map(|u| standard.value(u)).collect();
    Ok(Surface {
        columns: sp.decisions.iter().map(|v| v.label()).collect(),
        unit_factors: sp.decisions.iter().map(|v| v.unit_factor).collect(),
        points,
        saa_ei,
        ei,
    })
}

impl Surface {
    /// Share of solvable grid points where SAA-EI is exactly zero.
    pub fn saa_ei_zero_fraction(&self) -> f64 {
        let valid: Vec<f64> = self.saa_ei.iter().flatten().copied().collect();
        valid.iter().filter(|v| **v == 0.0).count() as f64 / valid.len().max(1) as f64
    }

    /// Share of grid points where analytic EI is positive.
    pub fn ei_nonzero_fraction(&self) -> f64 {
        self.ei.iter().filter(|v| **v > 0.0).count() as f64 / self.ei.len().max(1) as f64
    }

    /// `<decisions>, saa_ei, saa_ei_valid, ei` with decisions in their
    /// labelled units; an unsolvable point leaves `saa_ei` empty rather than
    /// writing NaN.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv_writer();
        let mut header = self.columns.clone();
        header.extend(["saa_ei", "saa_ei_valid", "ei"].map(String::from));
        w.write_record(&header).expect("in-memory write");
        for ((u, h), e) in self.points.iter().zip(&self.saa_ei).zip(&self.ei) {
            let mut row: Vec<String> = u.iter().zip(&self.unit_factors).map(|(x, f)| (x / f).to_string()).collect();
            row.push(h.map(|v| v.to_string()).unwrap_or_default());
            row.push(h.is_some().to_string());
            row.push(e.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}
