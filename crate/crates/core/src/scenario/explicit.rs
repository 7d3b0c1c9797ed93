use super::{combine, ScenarioNlp};
use crate::nlp::{Evaluation, JacobianBlock, NlpProblem, SparseJacobian};

/// Reference formulation that keeps every `y_s` as a variable tied to the GP
/// by the equality `y_s − T(μ + σ·ξ_s) = 0`. Variables are physical
/// `(u, x_1, y_1, …, x_S, y_S)`; derivatives are central differences.
pub struct ExplicitScenarioNlp<'n, 'a> {
    inner: &'n ScenarioNlp<'a>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'n, 'a> ExplicitScenarioNlp<'n, 'a> {
    pub fn new(inner: &'n ScenarioNlp<'a>) -> Self {
        let sp = &inner.model().space;
        let mut lower: Vec<f64> = sp.decisions.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = sp.decisions.iter().map(|v| v.upper).collect();
        for _ in 0..inner.scenarios().len() {
            for v in sp.states.iter().chain(&sp.unknowns) {
                lower.push(v.lower);
                upper.push(v.upper);
            }
        }
        ExplicitScenarioNlp { inner, lower, upper }
    }

    /// Lift an eliminated-form physical point by inserting the drawn `y_s`.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        let (u, xs) = self.inner.split(z);
        let mut v = u.to_vec();
        for (s, x) in xs.iter().enumerate() {
            v.extend_from_slice(x);
            v.extend(self.inner.draw(s, u, x));
        }
        v
    }
}

impl NlpProblem for ExplicitScenarioNlp<'_, '_> {
    fn num_variables(&self) -> usize {
        self.lower.len()
    }

    fn num_constraints(&self) -> usize {
        let sp = &self.inner.model().space;
        self.inner.scenarios().len() * (self.inner.model().residuals.len() + sp.ny())
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn values(&self, v: &[f64]) -> Option<(f64, Vec<f64>)> {
        let model = self.inner.model();
        let sp = &model.space;
        let (nu, nx, ny) = (sp.nu(), sp.nx(), sp.ny());
        let u = &v[..nu];
        let mut f = Vec::new();
        let mut c = Vec::new();
        for (s, chunk) in v[nu..].chunks(nx + ny).enumerate() {
            let (x, y) = chunk.split_at(nx);
            let slots = sp.pack(x, y, u);
            f.push(model.objective.tape.eval(&slots));
            let mut g = vec![0.0; model.residuals.len()];
            model.residuals.eval(&slots, &mut g);
            c.extend(g);
            for (yk, dk) in y.iter().zip(self.inner.draw(s, u, x)) {
                c.push(yk - dk);
            }
        }
        Some((combine(self.inner.kind(), self.inner.params(), &f, None), c))
    }

    fn evaluate(&self, v: &[f64]) -> Option<Evaluation> {
        let (objective, constraints) = self.values(v)?;
        let n = v.len();
        let m = constraints.len();
        let mut gradient = vec![0.0; n];
        let mut block = JacobianBlock::new(0, m, (0..n).collect());
        let mut p = v.to_vec();
        for j in 0..n {
            let h = 1e-7 * v[j].abs().max(1.0);
            p[j] = v[j] + h;
            let (fp, cp) = self.values(&p)?;
            p[j] = v[j] - h;
            let (fm, cm) = self.values(&p)?;
            p[j] = v[j];
            gradient[j] = (fp - fm) / (2.0 * h);
            for i in 0..m {
                *block.at_mut(i, j) = (cp[i] - cm[i]) / (2.0 * h);
            }
        }
        Some(Evaluation { objective, gradient, constraints, jacobian: SparseJacobian { nrows: m, ncols: n, blocks: vec![block] } })
    }
}
