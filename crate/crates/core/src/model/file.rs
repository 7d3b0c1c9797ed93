use std::collections::BTreeMap;

use serde::Deserialize;

use super::{
    Equation, GpBinding, HybridModel, MeasurementMap, ModelError, OutputTransform, ResidualSystem, VarKind, VarRef, Variable,
    VariableSpace,
};
use crate::expr::{parse, Symbol, Tape};

/// Factor converting a value in `unit` to SI.
pub fn unit_factor(unit: &str) -> Result<f64, ModelError> {
    Ok(match unit.trim() {
        "" | "1" | "-" | "K" | "Pa" | "mol/s" | "$" | "$/K^2" | "s" => 1.0,
        "bar" => 1e5,
        "kPa" => 1e3,
        "mbar" => 1e2,
        "$/bar^2" | "1/bar^2" => 1e-10,
        other => return Err(ModelError::Unit(other.to_string())),
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ConstantValue {
    Plain(f64),
    WithUnit { value: f64, unit: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableEntry {
    name: String,
    #[serde(default)]
    unit: String,
    lower: Option<f64>,
    upper: Option<f64>,
    scale: Option<f64>,
    guess: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Equations {
    residuals: Vec<String>,
    objective: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpEntry {
    regressors: Vec<String>,
    standardize: Option<Vec<bool>>,
    #[serde(default = "identity")]
    output_transform: OutputTransform,
}

fn identity() -> OutputTransform {
    OutputTransform::Identity
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementEntry {
    measured: Vec<String>,
}

/// Text form of a [`HybridModel`].
///
/// ```toml
/// name = "example"
/// [constants]
/// p_atm = { value = 1.01325, unit = "bar" }
/// [[decision]]
/// name = "p"
/// unit = "bar"
/// lower = 0.8
/// upper = 2.6
/// [[state]] ...
/// [[unknown]] ...
/// [equations]
/// residuals = ["..."]
/// objective = "..."
/// [gp]
/// regressors = ["p"]
/// standardize = [true]
/// output_transform = "identity"   # or "exp"
/// [measurement]
/// measured = ["..."]
/// ```
///
/// Bounds, guesses and constants are given in their declared unit and
/// converted to SI on load.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    name: String,
    #[serde(default)]
    constants: BTreeMap<String, ConstantValue>,
    decision: Vec<VariableEntry>,
    #[serde(default)]
    state: Vec<VariableEntry>,
    unknown: Vec<VariableEntry>,
    equations: Equations,
    gp: GpEntry,
    measurement: MeasurementEntry,
}

fn variable(e: &VariableEntry) -> Result<Variable, ModelError> {
    let f = unit_factor(&e.unit)?;
    Ok(Variable {
        name: e.name.clone(),
        unit: e.unit.clone(),
        unit_factor: f,
        lower: e.lower.map_or(f64::NEG_INFINITY, |v| v * f),
        upper: e.upper.map_or(f64::INFINITY, |v| v * f),
        scale: e.scale.map(|v| v * f),
        guess: e.guess.map(|v| v * f),
    })
}

impl ModelFile {
    pub fn parse(src: &str) -> Result<Self, ModelError> {
        toml::from_str(src).map_err(|e| ModelError::Syntax(e.to_string()))
    }

    /// Compile the model. `extra` constants override same-named file entries.
    pub fn build(&self, extra: &[(String, f64)]) -> Result<HybridModel, ModelError> {
        let space = VariableSpace {
            decisions: self.decision.iter().map(variable).collect::<Result<_, _>>()?,
            states: self.state.iter().map(variable).collect::<Result<_, _>>()?,
            unknowns: self.unknown.iter().map(variable).collect::<Result<_, _>>()?,
        };
        let mut constants = BTreeMap::new();
        for (k, v) in &self.constants {
            let value = match v {
                ConstantValue::Plain(x) => *x,
                ConstantValue::WithUnit { value, unit } => value * unit_factor(unit)?,
            };
            constants.insert(k.clone(), value);
        }
        for (k, v) in extra {
            constants.insert(k.clone(), *v);
        }
        let n = space.num_slots();
        let compile = |src: &str| -> Result<Equation, ModelError> {
            let expr = parse(src, |name| {
                space
                    .find(name)
                    .map(|r| Symbol::Variable(space.slot(r)))
                    .or_else(|| constants.get(name).map(|c| Symbol::Constant(*c)))
            })
            .map_err(|error| ModelError::Expression { source_text: src.to_string(), error })?;
            Ok(Equation { source: src.to_string(), tape: Tape::compile(&expr, n) })
        };
        let residuals = ResidualSystem {
            equations: self.equations.residuals.iter().map(|s| compile(s)).collect::<Result<_, _>>()?,
        };
        let objective = compile(&self.equations.objective)?;
        let lookup = |name: &String| space.find(name).ok_or_else(|| ModelError::UnknownVariable(name.clone()));
        let regressors: Vec<VarRef> = self.gp.regressors.iter().map(lookup).collect::<Result<_, _>>()?;
        let standardize = self.gp.standardize.clone().unwrap_or_else(|| vec![true; regressors.len()]);
        let measured = self.measurement.measured.iter().map(lookup).collect::<Result<_, _>>()?;
        Ok(HybridModel {
            name: self.name.clone(),
            residuals,
            objective,
            gp: GpBinding { regressors, standardize, transform: self.gp.output_transform },
            measurement: MeasurementMap { measured },
            space,
        })
    }
}

impl HybridModel {
    /// Parse, compile and validate a model file.
    pub fn from_toml(src: &str, extra_constants: &[(String, f64)]) -> Result<Self, ModelError> {
        let m = ModelFile::parse(src)?.build(extra_constants)?;
        let report = m.validate();
        if report.is_valid() {
            Ok(m)
        } else {
            Err(ModelError::Invalid(report.issues))
        }
    }

    pub fn decision_refs(&self) -> impl Iterator<Item = VarRef> + '_ {
        (0..self.space.nu()).map(|index| VarRef { kind: VarKind::Decision, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_convert_to_si() {
        let src = r#"
name = "units"
[constants]
p_atm = { value = 1.01325, unit = "bar" }
w = 2.0
[[decision]]
name = "p"
unit = "bar"
lower = 0.8
upper = 2.6
[[unknown]]
name = "y"
[equations]
residuals = []
objective = "w * (p - p_atm)^2"
[gp]
regressors = ["p"]
[measurement]
measured = ["y"]
"#;
        let m = HybridModel::from_toml(src, &[]).unwrap();
        let p = &m.space.decisions[0];
        assert_eq!((p.lower, p.upper), (0.8e5, 2.6e5));
        assert_eq!(p.label(), "p_bar");
        assert_eq!(m.objective_value(&[101325.0], &[], &[0.0]), 0.0);
        assert_eq!(m.objective_value(&[101326.0], &[], &[0.0]), 2.0);
    }

    #[test]
    fn unknown_symbol_is_reported() {
        let src = super::super::tests::ILLUSTRATIVE.replace("x + exp(x) - y", "x + exp(z) - y");
        assert!(matches!(HybridModel::from_toml(&src, &[]), Err(ModelError::Expression { .. })));
    }

    #[test]
    fn invalid_model_is_rejected() {
        let src = super::super::tests::ILLUSTRATIVE.replace("measured = [\"y\"]", "measured = []");
        assert!(matches!(HybridModel::from_toml(&src, &[]), Err(ModelError::Invalid(_))));
    }

    #[test]
    fn extra_constants_override() {
        let src = super::super::tests::ILLUSTRATIVE.replace("x + exp(x) - y", "x + exp(x) - y - c");
        let src = src.replace("name = \"toy\"", "name = \"toy\"\n[constants]\nc = 5.0");
        let m = HybridModel::from_toml(&src, &[("c".into(), 1.0)]).unwrap();
        let (_, g) = m.evaluate(&[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(g, vec![0.0]);
    }
}
