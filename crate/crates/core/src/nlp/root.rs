//! Damped Newton iteration for square nonlinear systems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Square system `r(x) = 0`.
pub trait RootSystem {
    fn dim(&self) -> usize;

    /// Fill `r`; return `false` when the point cannot be evaluated.
    fn residual(&self, x: &[f64], r: &mut [f64]) -> bool;

    /// Jacobian `∂r/∂x`. The default uses central differences.
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let n = self.dim();
        let mut xp = x.to_vec();
        let (mut rp, mut rm) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let ok_p = self.residual(&xp, &mut rp);
            xp[j] = x[j] - h;
            let ok_m = self.residual(&xp, &mut rm);
            xp[j] = x[j];
            if !(ok_p && ok_m) {
                return false;
            }
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        true
    }

    /// Optional box the iterates are clipped to.
    fn bounds(&self) -> Option<(&[f64], &[f64])> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct RootOptions {
    /// Target `‖r‖∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Index of the start that succeeded.
    pub start: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("no start points were supplied")]
    NoStarts,
    #[error("no root found from {starts} start(s); best residual {best_residual:e}")]
    NotFound { starts: usize, best_residual: f64 },
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn newton_from<S: RootSystem + ?Sized>(system: &S, x0: &[f64], opts: &RootOptions) -> (Vec<f64>, f64, usize) {
    let n = system.dim();
    let bounds = system.bounds();
    let clip = |x: &mut [f64]| {
        if let Some((lo, hi)) = bounds {
            for ((v, &l), &u) in x.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(l, u);
            }
        }
    };
    let mut x = x0.to_vec();
    clip(&mut x);
    let mut r = vec![0.0; n];
    if !system.residual(&x, &mut r) {
        return (x, f64::INFINITY, 0);
    }
    let mut norm = inf_norm(&r);
    let mut jac = DMatrix::zeros(n, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let mut polished = false;

    for it in 0..opts.max_iter {
        if norm <= opts.tol {
            if polished {
                return (x, norm, it);
            }
            polished = true;
        }
        if !system.jacobian(&x, &mut jac) {
            return (x, norm, it);
        }
        let Some(step) = jac.clone().lu().solve(&DVector::from_column_slice(&r)) else {
            return (x, norm, it);
        };
        let merit = r.iter().map(|v| v * v).sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = x[i] - t * step[i];
            }
            clip(&mut trial);
            if system.residual(&trial, &mut r_trial) {
                let m = r_trial.iter().map(|v| v * v).sum::<f64>();
                if m.is_finite() && m <= (1.0 - 1e-4 * t) * merit {
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return (x, norm, it);
        }
        x.copy_from_slice(&trial);
        r.copy_from_slice(&r_trial);
        norm = inf_norm(&r);
    }
    (x, norm, opts.max_iter)
}

/// Try each start in order and return the first root meeting the tolerance.
pub fn solve_root<S: RootSystem + ?Sized>(system: &S, starts: &[Vec<f64>], opts: &RootOptions) -> Result<Root, RootError> {
    if starts.is_empty() {
        return Err(RootError::NoStarts);
    }
    let mut best = f64::INFINITY;
    for (k, x0) in starts.iter().enumerate() {
        let (x, norm, iterations) = newton_from(system, x0, opts);
        if norm <= opts.tol {
            return Ok(Root { x, residual_norm: norm, iterations, start: k });
        }
        if norm < best {
            best = norm;
        }
    }
    Err(RootError::NotFound { starts: starts.len(), best_residual: best })
}

/// Closure-backed system with a finite-difference Jacobian.
pub struct FnSystem<F: Fn(&[f64], &mut [f64]) -> bool> {
    pub dim: usize,
    pub f: F,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl<F: Fn(&[f64], &mut [f64]) -> bool> RootSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn residual(&self, x: &[f64], r: &mut [f64]) -> bool {
        (self.f)(x, r) && r.iter().all(|v| v.is_finite())
    }
    fn bounds(&self) -> Option<(&[f64], &[f64])> {
        self.bounds.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice()))
    }
}

/// Root of a scalar function on a sign-changing bracket `[a, b]` by the
/// Illinois variant of regula falsi, with bisection when it stalls.
/// Returns `None` if the ends do not bracket a root.
pub fn solve_bracketed(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> Option<f64> {
    let (mut fa, mut fb) = (f(a), f(b));
    if !(fa.is_finite() && fb.is_finite()) || fa * fb > 0.0 {
        return None;
    }
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let width = (b - a).abs();
        if width <= xtol {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c.is_finite() && c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if !fc.is_finite() {
            return None;
        }
        if fc == 0.0 {
            return Some(c);
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
            side = 0;
        } else {
            // Same end retained twice in a row: halve its weight.
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        b = c;
        fb = fc;
        if (b - a).abs() > 0.5 * width {
            let m = 0.5 * (a + b);
            let fm = f(m);
            if fm * fb < 0.0 {
                a = b;
                fa = fb;
            }
            b = m;
            fb = fm;
            side = 0;
        }
    }
    Some(if fa.abs() < fb.abs() { a } else { b })
}
