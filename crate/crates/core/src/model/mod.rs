//! Hybrid model definitions: decision variables `u`, states `x` determined by
//! mechanistic residuals `g(x, y, u) = 0`, unknown-equation outputs `y`
//! supplied by a GP, and a known objective `f(x, y, u)`.
//!
//! Expressions are compiled over one slot vector laid out as `[x | y | u]`.

mod file;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Tape};
use crate::nlp::{solve_root, FnSystem, RootError, RootOptions};

pub use file::{unit_factor, ModelFile};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file: {0}")]
    Syntax(String),
    #[error("expression `{source_text}`: {error}")]
    Expression { source_text: String, error: ExprError },
    #[error("unknown unit `{0}`")]
    Unit(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("{component} is not finite")]
    NonFinite { component: String },
    #[error("model is invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("reconstruction failed: {0}")]
    Reconstruction(#[from] RootError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Decision,
    State,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarRef {
    pub kind: VarKind,
    pub index: usize,
}

/// A named scalar. Bounds, scale and guess are stored in SI units; `unit` and
/// `unit_factor` describe how the value is presented (`display = si / factor`).
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub unit: String,
    pub unit_factor: f64,
    pub lower: f64,
    pub upper: f64,
    pub scale: Option<f64>,
    pub guess: Option<f64>,
}

impl Variable {
    pub fn new(name: &str, lower: f64, upper: f64) -> Self {
        Variable {
            name: name.to_string(),
            unit: String::new(),
            unit_factor: 1.0,
            lower,
            upper,
            scale: None,
            guess: None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    /// Column label such as `T_K` or `p_bar`.
    pub fn label(&self) -> String {
        if self.unit.is_empty() || self.unit == "1" {
            self.name.clone()
        } else {
            format!("{}_{}", self.name, self.unit.replace('/', "_per_").replace('^', ""))
        }
    }

    /// SI value in the variable's presentation unit.
    pub fn display(&self, si: f64) -> f64 {
        si / self.unit_factor
    }

    /// A starting value: the guess, else the box midpoint, else a clipped zero/one.
    pub fn initial(&self) -> f64 {
        if let Some(g) = self.guess {
            g
        } else if self.is_bounded() {
            0.5 * (self.lower + self.upper)
        } else {
            1.0f64.clamp(self.lower, self.upper)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableSpace {
    pub decisions: Vec<Variable>,
    pub states: Vec<Variable>,
    pub unknowns: Vec<Variable>,
}

impl VariableSpace {
    pub fn nu(&self) -> usize {
        self.decisions.len()
    }
    pub fn nx(&self) -> usize {
        self.states.len()
    }
    pub fn ny(&self) -> usize {
        self.unknowns.len()
    }
    pub fn num_slots(&self) -> usize {
        self.nx() + self.ny() + self.nu()
    }

    pub fn slot(&self, r: VarRef) -> usize {
        match r.kind {
            VarKind::State => r.index,
            VarKind::Unknown => self.nx() + r.index,
            VarKind::Decision => self.nx() + self.ny() + r.index,
        }
    }

    pub fn get(&self, r: VarRef) -> &Variable {
        match r.kind {
            VarKind::Decision => &self.decisions[r.index],
            VarKind::State => &self.states[r.index],
            VarKind::Unknown => &self.unknowns[r.index],
        }
    }

    pub fn find(&self, name: &str) -> Option<VarRef> {
        let pos = |v: &[Variable]| v.iter().position(|x| x.name == name);
        if let Some(i) = pos(&self.states) {
            return Some(VarRef { kind: VarKind::State, index: i });
        }
        if let Some(i) = pos(&self.unknowns) {
            return Some(VarRef { kind: VarKind::Unknown, index: i });
        }
        pos(&self.decisions).map(|i| VarRef { kind: VarKind::Decision, index: i })
    }

    pub fn pack(&self, x: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_slots());
        v.extend_from_slice(x);
        v.extend_from_slice(y);
        v.extend_from_slice(u);
        v
    }

    pub fn decision_lower(&self) -> Vec<f64> {
        self.decisions.iter().map(|v| v.lower).collect()
    }

    pub fn decision_upper(&self) -> Vec<f64> {
        self.decisions.iter().map(|v| v.upper).collect()
    }
}

/// A compiled expression together with its source text.
#[derive(Debug, Clone)]
pub struct Equation {
    pub source: String,
    pub tape: Tape,
}

/// Mechanistic residuals `g(x, y, u)`.
#[derive(Debug, Clone)]
pub struct ResidualSystem {
    pub equations: Vec<Equation>,
}

impl ResidualSystem {
    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn eval(&self, slots: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.equations) {
            *o = e.tape.eval(slots);
        }
    }

    /// Analytic Jacobian with respect to every slot.
    pub fn jacobian(&self, slots: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.len(), slots.len());
        let mut g = vec![0.0; slots.len()];
        for (i, e) in self.equations.iter().enumerate() {
            e.tape.eval_grad(slots, &mut g);
            for (j, v) in g.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        jac
    }

    /// Central-difference Jacobian.
    pub fn jacobian_fd(&self, slots: &[f64]) -> DMatrix<f64> {
        let n = slots.len();
        let mut jac = DMatrix::zeros(self.len(), n);
        let mut p = slots.to_vec();
        for j in 0..n {
            let h = 1e-6 * slots[j].abs().max(1.0);
            p[j] = slots[j] + h;
            let fp: Vec<f64> = self.equations.iter().map(|e| e.tape.eval(&p)).collect();
            p[j] = slots[j] - h;
            let fm: Vec<f64> = self.equations.iter().map(|e| e.tape.eval(&p)).collect();
            p[j] = slots[j];
            for i in 0..self.len() {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    /// The GP models `ln y`.
    Exp,
}

impl OutputTransform {
    /// Map a GP output to `y` and return `dy/dg` as well.
    pub fn apply(self, g: f64) -> (f64, f64) {
        match self {
            OutputTransform::Identity => (g, 1.0),
            OutputTransform::Exp => {
                let e = g.exp();
                (e, e)
            }
        }
    }

    /// GP label for an observed `y`.
    pub fn label(self, y: f64) -> f64 {
        match self {
            OutputTransform::Identity => y,
            OutputTransform::Exp => y.ln(),
        }
    }
}

/// Which variables feed the GP and how its output maps onto `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpBinding {
    pub regressors: Vec<VarRef>,
    pub standardize: Vec<bool>,
    pub transform: OutputTransform,
}

/// Variables that are measured in an experiment; their count equals `dim y`
/// so the remaining unknowns form a square system.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMap {
    pub measured: Vec<VarRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// States and unknown outputs recovered from one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct HybridModel {
    pub name: String,
    pub space: VariableSpace,
    pub residuals: ResidualSystem,
    pub objective: Equation,
    pub gp: GpBinding,
    pub measurement: MeasurementMap,
}

impl HybridModel {
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let s = &self.space;
        let mut names: Vec<&str> = s.decisions.iter().chain(&s.states).chain(&s.unknowns).map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                issues.push(format!("duplicate variable name `{}`", w[0]));
            }
        }
        if s.nu() == 0 {
            issues.push("no decision variables".into());
        }
        for v in &s.decisions {
            if !(v.lower.is_finite() && v.upper.is_finite() && v.lower < v.upper) {
                issues.push(format!("decision `{}` needs finite bounds with lower < upper", v.name));
            }
        }
        for v in s.states.iter().chain(&s.unknowns) {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                issues.push(format!("bounds of `{}` are not ordered", v.name));
            }
        }
        if s.ny() == 0 {
            issues.push("no unknown-equation outputs".into());
        }
        let (ng, nx) = (self.residuals.len(), s.nx());
        if ng < nx {
            issues.push(format!("underdetermined: {ng} residual(s) for {nx} state(s)"));
        } else if ng > nx {
            issues.push(format!("overdetermined: {ng} residual(s) for {nx} state(s)"));
        }
        if self.gp.regressors.is_empty() {
            issues.push("GP has no regressors".into());
        }
        if self.gp.regressors.iter().any(|r| r.kind == VarKind::Unknown) {
            issues.push("GP regressors must be decisions or states".into());
        }
        if self.gp.standardize.len() != self.gp.regressors.len() {
            issues.push("GP standardize flags must match the regressors".into());
        }
        if self.measurement.measured.len() != s.ny() {
            issues.push(format!(
                "{} measured variable(s) but dim y = {}",
                self.measurement.measured.len(),
                s.ny()
            ));
        }
        if self.measurement.measured.iter().any(|r| r.kind == VarKind::Decision) {
            issues.push("decision variables cannot be designated as measured".into());
        }
        ValidationReport { issues }
    }

    /// Objective and residuals at `(u, x, y)`.
    pub fn evaluate(&self, u: &[f64], x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
        let s = &self.space;
        for (what, got, want) in [("u", u.len(), s.nu()), ("x", x.len(), s.nx()), ("y", y.len(), s.ny())] {
            if got != want {
                return Err(ModelError::Dimension { what, expected: want, found: got });
            }
        }
        let slots = s.pack(x, y, u);
        let f = self.objective.tape.eval(&slots);
        if !f.is_finite() {
            return Err(ModelError::NonFinite { component: "objective".into() });
        }
        let mut g = vec![0.0; self.residuals.len()];
        self.residuals.eval(&slots, &mut g);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { component: format!("residual {i} (`{}`)", self.residuals.equations[i].source) });
        }
        Ok((f, g))
    }

    pub fn objective_value(&self, u: &[f64], x: &[f64], y: &[f64]) -> f64 {
        self.objective.tape.eval(&self.space.pack(x, y, u))
    }

    /// GP inputs in regressor order.
    pub fn regressor_values(&self, u: &[f64], x: &[f64]) -> Vec<f64> {
        self.gp
            .regressors
            .iter()
            .map(|r| match r.kind {
                VarKind::Decision => u[r.index],
                VarKind::State => x[r.index],
                VarKind::Unknown => f64::NAN,
            })
            .collect()
    }

    /// GP training labels for a reconstructed `y`.
    pub fn labels(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.gp.transform.label(*v)).collect()
    }

    /// Solve `g = 0` for the unmeasured states and outputs given `u` and the
    /// measured values.
    pub fn reconstruct(&self, u: &[f64], measured: &[f64]) -> Result<Reconstruction, ModelError> {
        let s = &self.space;
        if measured.len() != self.measurement.measured.len() {
            return Err(ModelError::Dimension {
                what: "measurements",
                expected: self.measurement.measured.len(),
                found: measured.len(),
            });
        }
        let mut base = s.pack(
            &s.states.iter().map(Variable::initial).collect::<Vec<_>>(),
            &s.unknowns.iter().map(Variable::initial).collect::<Vec<_>>(),
            u,
        );
        let fixed: Vec<usize> = self.measurement.measured.iter().map(|r| s.slot(*r)).collect();
        for (&slot, &v) in fixed.iter().zip(measured) {
            base[slot] = v;
        }
        let free: Vec<usize> = (0..s.nx() + s.ny()).filter(|i| !fixed.contains(i)).collect();
        let var_of = |slot: usize| -> &Variable {
            if slot < s.nx() {
                &s.states[slot]
            } else {
                &s.unknowns[slot - s.nx()]
            }
        };
        let lower: Vec<f64> = free.iter().map(|&i| var_of(i).lower).collect();
        let upper: Vec<f64> = free.iter().map(|&i| var_of(i).upper).collect();

        let system = FnSystem {
            dim: free.len(),
            f: |z: &[f64], r: &mut [f64]| {
                let mut slots = base.clone();
                for (&i, &v) in free.iter().zip(z) {
                    slots[i] = v;
                }
                self.residuals.eval(&slots, r);
                true
            },
            bounds: Some((lower.clone(), upper.clone())),
        };
        let mut starts = vec![free.iter().map(|&i| base[i]).collect::<Vec<f64>>()];
        // Interior points of the box as further starts.
        for t in [0.25, 0.75, 0.1, 0.9] {
            starts.push(
                lower
                    .iter()
                    .zip(&upper)
                    .zip(&starts[0])
                    .map(|((l, u), g)| if l.is_finite() && u.is_finite() { l + t * (u - l) } else { *g })
                    .collect(),
            );
        }
        let root = solve_root(&system, &starts, &RootOptions::default())?;
        let mut slots = base.clone();
        for (&i, &v) in free.iter().zip(&root.x) {
            slots[i] = v;
        }
        Ok(Reconstruction {
            x: slots[..s.nx()].to_vec(),
            y: slots[s.nx()..s.nx() + s.ny()].to_vec(),
            residual_norm: root.residual_norm,
        })
    }
}
