use std::sync::{Arc, OnceLock};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_box, Benchmark, BenchmarkError, Imputed, Observation, Optimum};
use crate::model::HybridModel;
use crate::nlp::{minimize_box, solve_bracketed, BoxOptions};
use crate::rng::Rng;

const MODEL: &str = include_str!("../../data/flash.toml");
const THERMO: &str = include_str!("../../data/flash_thermo.toml");

const FEED: f64 = 1.0;
const DISTILLATE: f64 = 0.3;
const Z1: f64 = 0.5;
const BAR: f64 = 1e5;
const ATM: f64 = 101_325.0;

const GRID_POINTS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("thermo file: {0}")]
    Parse(String),
    #[error("Antoine units must be `log10(Pa), K`, found `{0}`")]
    Units(String),
    #[error("Antoine p_sat(373.15 K) = {psat:.1} Pa is more than 2% from 101325 Pa")]
    BoilingPoint { psat: f64 },
    #[error("Antoine p_sat is not increasing on [{lower}, {upper}] K")]
    NotIncreasing { lower: f64, upper: f64 },
    #[error("NRTL validity range [{lower}, {upper}] K does not cover the temperature box")]
    ValidityRange { lower: f64, upper: f64 },
    #[error("NRTL non-randomness factor {alpha} outside (0, 1) at {t} K")]
    Alpha { alpha: f64, t: f64 },
    #[error("{what} = {value} outside the NRTL domain")]
    Domain { what: &'static str, value: f64 },
}

/// `log10(p_sat / Pa) = a − b / (c + T / K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntoineParams {
    pub component: String,
    pub units: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Binary NRTL parameters; index 1 is the volatile component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrtlParams {
    pub a12: f64,
    pub a21: f64,
    pub b12: f64,
    pub b21: f64,
    pub c12: f64,
    pub c21: f64,
    pub d12: f64,
    pub d21: f64,
    pub validity_min_k: f64,
    pub validity_max_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoParams {
    pub version: u32,
    pub antoine: AntoineParams,
    pub nrtl: NrtlParams,
}

impl ThermoParams {
    pub fn shipped() -> Self {
        Self::from_toml(THERMO).expect("shipped thermo file parses")
    }

    pub fn from_toml(src: &str) -> Result<Self, ThermoError> {
        toml::from_str(src).map_err(|e| ThermoError::Parse(e.to_string()))
    }

    /// Load-time sanity checks against the temperature box `[t_lo, t_hi]`.
    pub fn validate(&self, t_lo: f64, t_hi: f64) -> Result<(), ThermoError> {
        let an = &self.antoine;
        if an.units.replace(' ', "") != "log10(Pa),K" {
            return Err(ThermoError::Units(an.units.clone()));
        }
        let n = &self.nrtl;
        if !(n.validity_min_k <= t_lo && t_hi <= n.validity_max_k) {
            return Err(ThermoError::ValidityRange { lower: n.validity_min_k, upper: n.validity_max_k });
        }
        // d/dT of a − b/(c+T) is b/(c+T)², positive iff b > 0 with c+T bounded away from 0.
        if !(an.b > 0.0 && an.c + n.validity_min_k > 0.0) {
            return Err(ThermoError::NotIncreasing { lower: n.validity_min_k, upper: n.validity_max_k });
        }
        let psat = antoine_psat(373.15, an);
        if ((psat - ATM) / ATM).abs() > 0.02 {
            return Err(ThermoError::BoilingPoint { psat });
        }
        // α is affine in T, so the box ends bound it.
        for t in [t_lo, t_hi] {
            for alpha in [n.c12 + n.d12 * (t - 273.15), n.c21 + n.d21 * (t - 273.15)] {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(ThermoError::Alpha { alpha, t });
                }
            }
        }
        Ok(())
    }
}

/// Vapor pressure in Pa at `t` in K.
pub fn antoine_psat(t: f64, p: &AntoineParams) -> f64 {
    10f64.powf(p.a - p.b / (p.c + t))
}

/// `ln γ₁` of the volatile component at temperature `t` (K) and liquid mole
/// fraction `x1`.
pub fn nrtl_ln_gamma1(t: f64, x1: f64, p: &NrtlParams) -> Result<f64, ThermoError> {
    if !(t >= p.validity_min_k && t <= p.validity_max_k) {
        return Err(ThermoError::Domain { what: "T", value: t });
    }
    if !(0.0..=1.0).contains(&x1) {
        return Err(ThermoError::Domain { what: "x1", value: x1 });
    }
    Ok(ln_gamma1_unchecked(t, x1, p))
}

fn ln_gamma1_unchecked(t: f64, x1: f64, p: &NrtlParams) -> f64 {
    let x2 = 1.0 - x1;
    let tau12 = p.a12 + p.b12 / t;
    let tau21 = p.a21 + p.b21 / t;
    let alpha12 = p.c12 + p.d12 * (t - 273.15);
    let alpha21 = p.c21 + p.d21 * (t - 273.15);
    let g12 = (-alpha12 * tau12).exp();
    let g21 = (-alpha21 * tau21).exp();
    let r21 = g21 / (x1 + x2 * g21);
    x2 * x2 * (tau21 * r21 * r21 + tau12 * g12 / (x2 + x1 * g12).powi(2))
}

/// Equilibrium of the flash at fixed `(T, p)`, SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashState {
    pub t: f64,
    pub p: f64,
    pub b: f64,
    pub x1: f64,
    pub psat: f64,
    pub y1: f64,
    pub gamma1: f64,
}

impl FlashState {
    /// States in model order `(B, x1, psat, y1)`.
    pub fn x(&self) -> [f64; 4] {
        [self.b, self.x1, self.psat, self.y1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlashOutcome {
    Feasible(FlashState),
    /// Single phase: the two-phase root has `x1 > z1` or a mole fraction
    /// outside `[0, 1]`.
    Infeasible(FlashState),
}

/// Water / acetic acid flash with decisions `(T, p)` and `ln γ₁(T, x1)` unknown.
pub struct Flash {
    model: HybridModel,
    thermo: ThermoParams,
    optimum: Arc<OnceLock<Optimum>>,
}

impl Flash {
    pub fn new() -> Result<Self, BenchmarkError> {
        Self::with_thermo(ThermoParams::shipped())
    }

    pub fn with_thermo(thermo: ThermoParams) -> Result<Self, BenchmarkError> {
        let an = &thermo.antoine;
        let consts = [("A1".to_string(), an.a), ("B1".to_string(), an.b), ("C1".to_string(), an.c)];
        let model = HybridModel::from_toml(MODEL, &consts)?;
        let t = &model.space.decisions[0];
        thermo.validate(t.lower, t.upper)?;
        static SHIPPED: OnceLock<Arc<OnceLock<Optimum>>> = OnceLock::new();
        let optimum = if thermo == ThermoParams::shipped() {
            SHIPPED.get_or_init(Default::default).clone()
        } else {
            Default::default()
        };
        Ok(Flash { model, thermo, optimum })
    }

    pub fn thermo(&self) -> &ThermoParams {
        &self.thermo
    }

    /// Solve the balances, Antoine and modified Raoult's law with NRTL
    /// activity at `(t, p)` in K and Pa.
    pub fn simulate(&self, t: f64, p: f64) -> Result<FlashOutcome, BenchmarkError> {
        let fail = |reason: String| BenchmarkError::Simulation { u: vec![t, p], reason };
        if !(t >= self.thermo.nrtl.validity_min_k && t <= self.thermo.nrtl.validity_max_k && p > 0.0) {
            return Err(fail("conditions outside the property-model range".into()));
        }
        let b = FEED - DISTILLATE;
        let psat = antoine_psat(t, &self.thermo.antoine);
        // Raoult residual after eliminating y1 through the component balance;
        // positive at x1 = 0 and negative where y1 reaches 0.
        let raoult = |x1: f64| p * (FEED * Z1 - b * x1) / DISTILLATE - psat * x1 * ln_gamma1_unchecked(t, x1, &self.thermo.nrtl).exp();
        let x1 = solve_bracketed(raoult, 0.0, FEED * Z1 / b, 1e-15).ok_or_else(|| fail("no bracketed root".into()))?;
        let y1 = (FEED * Z1 - b * x1) / DISTILLATE;
        let gamma1 = ln_gamma1_unchecked(t, x1, &self.thermo.nrtl).exp();
        let state = FlashState { t, p, b, x1, psat, y1, gamma1 };
        let resid = (p * y1 - psat * x1 * gamma1).abs() / BAR;
        if !(resid <= 1e-10) {
            return Err(fail(format!("equilibrium residual {resid:e} bar")));
        }
        let feasible = x1 <= Z1 && (0.0..=1.0).contains(&y1) && (0.0..=1.0).contains(&x1);
        Ok(if feasible { FlashOutcome::Feasible(state) } else { FlashOutcome::Infeasible(state) })
    }

    /// Model residuals at a simulated state; balances in mol/s, the rest in bar.
    pub fn residuals(&self, s: &FlashState) -> Vec<f64> {
        self.model.evaluate(&[s.t, s.p], &s.x(), &[s.gamma1]).map(|(_, g)| g).unwrap_or_default()
    }

    fn objective_at(&self, t: f64, p: f64) -> Option<f64> {
        match self.simulate(t, p) {
            Ok(FlashOutcome::Feasible(s)) => Some(self.model.objective_value(&[t, p], &s.x(), &[s.gamma1])),
            _ => None,
        }
    }

    fn compute_optimum(&self) -> Optimum {
        let sp = &self.model.space;
        let (lo, hi) = (sp.decision_lower(), sp.decision_upper());
        let step = [(hi[0] - lo[0]) / (GRID_POINTS - 1) as f64, (hi[1] - lo[1]) / (GRID_POINTS - 1) as f64];
        let at = |i: usize, j: usize| [lo[0] + step[0] * i as f64, lo[1] + step[1] * j as f64];
        let (f_grid, (bi, bj)) = (0..GRID_POINTS * GRID_POINTS)
            .into_par_iter()
            .filter_map(|k| {
                let (i, j) = (k / GRID_POINTS, k % GRID_POINTS);
                let u = at(i, j);
                self.objective_at(u[0], u[1]).map(|f| (f, (i, j)))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("flash box has feasible points");
        let u_grid = at(bi, bj);

        // Polish within the neighbouring grid cells, in cell-normalized coordinates.
        let cell_lo = [(u_grid[0] - step[0]).max(lo[0]), (u_grid[1] - step[1]).max(lo[1])];
        let cell_hi = [(u_grid[0] + step[0]).min(hi[0]), (u_grid[1] + step[1]).min(hi[1])];
        let to_u = |w: &[f64]| [cell_lo[0] + w[0] * (cell_hi[0] - cell_lo[0]), cell_lo[1] + w[1] * (cell_hi[1] - cell_lo[1])];
        let f = |w: &[f64]| {
            let u = to_u(w);
            self.objective_at(u[0], u[1]).unwrap_or(f64::INFINITY)
        };
        let res = minimize_box(
            |w: &[f64], g: Option<&mut [f64]>| {
                if let Some(g) = g {
                    let h = 1e-6;
                    for k in 0..2 {
                        let (mut wp, mut wm) = ([w[0], w[1]], [w[0], w[1]]);
                        wp[k] += h;
                        wm[k] -= h;
                        g[k] = (f(&wp) - f(&wm)) / (2.0 * h);
                    }
                }
                f(w)
            },
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &BoxOptions { pg_tol: 1e-10, max_iter: 200, ..Default::default() },
        );
        if res.f < f_grid {
            Optimum { value: res.f, u: to_u(&res.x).to_vec() }
        } else {
            Optimum { value: f_grid, u: u_grid.to_vec() }
        }
    }
}

impl Benchmark for Flash {
    fn name(&self) -> &str {
        "flash"
    }

    fn model(&self) -> &HybridModel {
        &self.model
    }

    fn observe(&self, u: &[f64]) -> Result<Observation, BenchmarkError> {
        check_box(&self.model, u)?;
        Ok(match self.simulate(u[0], u[1])? {
            FlashOutcome::Feasible(s) => Observation::Feasible(vec![s.x1]),
            FlashOutcome::Infeasible(_) => Observation::Infeasible,
        })
    }

    fn true_objective(&self, u: &[f64]) -> Result<Option<f64>, BenchmarkError> {
        check_box(&self.model, u)?;
        Ok(match self.simulate(u[0], u[1])? {
            FlashOutcome::Feasible(s) => Some(self.model.objective_value(u, &s.x(), &[s.gamma1])),
            FlashOutcome::Infeasible(_) => None,
        })
    }

    fn optimum(&self) -> Optimum {
        self.optimum.get_or_init(|| self.compute_optimum()).clone()
    }

    /// Objective with `y1 = 0` at the suggested `(T, p)`.
    fn infeasible_penalty(&self, u: &[f64]) -> Option<f64> {
        Some(self.model.objective_value(u, &[FEED - DISTILLATE, 0.0, BAR, 0.0], &[1.0]))
    }

    /// `ln γ₁ = 0` at `(T, x̃1)` with `x̃1 ~ U[0.5, 1]`.
    fn impute(&self, u: &[f64], rng: &mut Rng) -> Option<Imputed> {
        let x1 = rng.random_range(0.5..=1.0);
        Some(Imputed { regressors: vec![u[0], x1], labels: vec![0.0], rule: "ln(gamma1)=0 at x1~U[0.5,1]".into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn flash() -> Flash {
        Flash::new().unwrap()
    }

    /// The same formulas written out term by term.
    fn ln_gamma_reference(t: f64, x1: f64, p: &NrtlParams) -> f64 {
        let x2 = 1.0 - x1;
        let tau = [p.a12 + p.b12 / t, p.a21 + p.b21 / t];
        let alpha = [p.c12 + p.d12 * (t - 273.15), p.c21 + p.d21 * (t - 273.15)];
        let g = [(-alpha[0] * tau[0]).exp(), (-alpha[1] * tau[1]).exp()];
        let first = tau[1] * (g[1] / (x1 + x2 * g[1])).powi(2);
        let second = tau[0] * g[0] / (x2 + x1 * g[0]).powi(2);
        x2.powi(2) * (first + second)
    }

    #[test]
    fn nrtl_pure_component_limit_is_exact() {
        let p = &ThermoParams::shipped().nrtl;
        for i in 0..=50 {
            let t = 290.78 + (504.83 - 290.78) * i as f64 / 50.0;
            assert_eq!(nrtl_ln_gamma1(t, 1.0, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn nrtl_matches_reference_and_rejects_domain() {
        let p = &ThermoParams::shipped().nrtl;
        for &(t, x1) in &[(363.15, 0.1), (380.0, 0.43), (403.15, 0.9), (300.0, 0.0)] {
            let v = nrtl_ln_gamma1(t, x1, p).unwrap();
            assert!((v - ln_gamma_reference(t, x1, p)).abs() < 1e-14);
            assert!(v.exp() > 0.0);
        }
        assert!(nrtl_ln_gamma1(250.0, 0.5, p).is_err());
        assert!(nrtl_ln_gamma1(380.0, 1.2, p).is_err());
    }

    #[test]
    fn nrtl_without_temperature_terms_is_flat_in_t() {
        let mut p = ThermoParams::shipped().nrtl;
        p.b12 = 0.0;
        p.b21 = 0.0;
        p.d12 = 0.0;
        p.d21 = 0.0;
        for x1 in [0.2, 0.5, 0.8] {
            let d = (nrtl_ln_gamma1(380.0 + 1e-4, x1, &p).unwrap() - nrtl_ln_gamma1(380.0 - 1e-4, x1, &p).unwrap()) / 2e-4;
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn antoine_is_increasing_and_boils_near_one_atmosphere() {
        let a = &ThermoParams::shipped().antoine;
        let ts: Vec<f64> = (0..100).map(|i| 290.78 + (504.83 - 290.78) * i as f64 / 99.0).collect();
        assert!(ts.windows(2).all(|w| antoine_psat(w[1], a) > antoine_psat(w[0], a)));
        assert!((antoine_psat(373.15, a) / 101_325.0 - 1.0).abs() <= 0.02);
        for t in [300.0, 373.15, 450.0] {
            let h = 1e-4;
            let fd = (antoine_psat(t + h, a).log10() - antoine_psat(t - h, a).log10()) / (2.0 * h);
            let exact = a.b / (a.c + t).powi(2);
            assert!((fd - exact).abs() <= 1e-6 * exact);
        }
    }

    #[test]
    fn thermo_validation_rejects_bad_files() {
        let good = ThermoParams::shipped();
        assert!(good.validate(363.15, 403.15).is_ok());
        let mut bad = good.clone();
        bad.antoine.a += 0.1;
        assert!(matches!(bad.validate(363.15, 403.15), Err(ThermoError::BoilingPoint { .. })));
        let mut bad = good.clone();
        bad.nrtl.validity_max_k = 400.0;
        assert!(matches!(bad.validate(363.15, 403.15), Err(ThermoError::ValidityRange { .. })));
        let mut bad = good.clone();
        bad.nrtl.c12 = 1.2;
        assert!(matches!(bad.validate(363.15, 403.15), Err(ThermoError::Alpha { .. })));
        let mut bad = good;
        bad.antoine.units = "mmHg, C".into();
        assert!(matches!(bad.validate(363.15, 403.15), Err(ThermoError::Units(_))));
        assert!(matches!(Flash::with_thermo(bad), Err(BenchmarkError::Thermo(_))));
    }

    #[test]
    fn feasible_states_conserve_and_agree_with_the_model() {
        let fl = flash();
        let mut rng = stream(3, 0, Purpose::Generic);
        let mut feasible = 0;
        for _ in 0..200 {
            let t = rng.random_range(363.15..=403.15);
            let p = rng.random_range(0.8e5..=2.6e5);
            if let FlashOutcome::Feasible(s) = fl.simulate(t, p).unwrap() {
                feasible += 1;
                assert!((DISTILLATE + s.b - FEED).abs() <= 1e-12);
                assert!((DISTILLATE * s.y1 + s.b * s.x1 - FEED * Z1).abs() <= 1e-10);
                assert!((s.p * s.y1 - s.psat * s.x1 * s.gamma1).abs() / BAR <= 1e-10);
                assert!(0.0 <= s.x1 && s.x1 <= Z1 && Z1 <= s.y1 && s.y1 <= 1.0);
                assert!(fl.residuals(&s).iter().all(|r| r.abs() <= 1e-10), "{:?}", fl.residuals(&s));
            }
        }
        assert!(feasible > 20);
    }

    #[test]
    fn reconstruction_recovers_the_activity_coefficient() {
        let fl = flash();
        let mut rng = stream(11, 0, Purpose::Generic);
        let mut checked = 0;
        while checked < 50 {
            let u = [rng.random_range(363.15..=403.15), rng.random_range(0.8e5..=2.6e5)];
            let Observation::Feasible(m) = fl.observe(&u).unwrap() else { continue };
            let FlashOutcome::Feasible(s) = fl.simulate(u[0], u[1]).unwrap() else { unreachable!() };
            let rec = fl.model().reconstruct(&u, &m).unwrap();
            assert!((rec.y[0] - s.gamma1).abs() <= 1e-8, "{} vs {}", rec.y[0], s.gamma1);
            checked += 1;
        }
    }

    #[test]
    fn single_phase_region_is_connected_and_flagged_by_x1() {
        let fl = flash();
        let n = 40;
        let grid: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let t = 363.15 + 40.0 * i as f64 / (n - 1) as f64;
                        let p = 0.8e5 + 1.8e5 * j as f64 / (n - 1) as f64;
                        match fl.simulate(t, p).unwrap() {
                            FlashOutcome::Infeasible(s) => s.x1 > Z1,
                            FlashOutcome::Feasible(_) => false,
                        }
                    })
                    .collect()
            })
            .collect();
        let total = grid.iter().flatten().filter(|v| **v).count();
        assert!(total > 0 && grid[0][n - 1], "cold high-pressure corner is liquid only");
        let mut seen = vec![vec![false; n]; n];
        let mut stack = vec![(0, n - 1)];
        let mut reached = 0;
        while let Some((i, j)) = stack.pop() {
            if seen[i][j] || !grid[i][j] {
                continue;
            }
            seen[i][j] = true;
            reached += 1;
            for (di, dj) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if (0..n as i64).contains(&a) && (0..n as i64).contains(&b) {
                    stack.push((a as usize, b as usize));
                }
            }
        }
        assert_eq!(reached, total);
    }

    #[test]
    fn penalty_and_imputation() {
        let fl = flash();
        let u = [363.15, ATM];
        let expect = 100.0 * 0.66f64.powi(2) + 0.01 * 363.15f64.powi(2);
        assert!((fl.infeasible_penalty(&u).unwrap() - expect).abs() < 1e-9);
        let up = fl.infeasible_penalty(&[363.15, 1.2e5]).unwrap();
        assert!(up > expect);
        let dt = fl.infeasible_penalty(&[364.15, ATM]).unwrap() - expect;
        assert!(dt > 0.0);

        let mut rng = stream(5, 0, Purpose::Imputation);
        for _ in 0..10_000 {
            let r = fl.impute(&u, &mut rng).unwrap();
            assert!((0.5..=1.0).contains(&r.regressors[1]));
            assert_eq!(r.labels, vec![0.0]);
        }
        let a = fl.impute(&u, &mut stream(5, 1, Purpose::Imputation)).unwrap();
        let b = fl.impute(&u, &mut stream(5, 1, Purpose::Imputation)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn optimum_is_feasible_and_beats_a_coarse_grid() {
        let fl = flash();
        let opt = fl.optimum();
        assert_eq!(fl.true_objective(&opt.u).unwrap(), Some(opt.value));
        for i in 0..=50 {
            for j in 0..=50 {
                let u = [363.15 + 0.8 * i as f64, 0.8e5 + 3.6e3 * j as f64];
                if let Some(f) = fl.true_objective(&u).unwrap() {
                    assert!(f >= opt.value);
                }
            }
        }
    }
}
