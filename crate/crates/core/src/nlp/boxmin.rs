//! Projected limited-memory quasi-Newton minimization on a box.

use std::collections::VecDeque;

use super::problem::{all_finite, project, projected_gradient_norm};

#[derive(Debug, Clone)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient ∞-norm falls below this.
    pub pg_tol: f64,
    /// Stop when the relative decrease of one iteration falls below this.
    /// Zero disables the test.
    pub f_rel_tol: f64,
    pub memory: usize,
    /// ∞-norm of the very first trial step.
    pub initial_step: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions {
            max_iter: 500,
            pg_tol: 1e-6,
            f_rel_tol: 0.0,
            memory: 10,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxStatus {
    Converged,
    SmallDecrease,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub pg_norm: f64,
    pub iterations: usize,
    pub status: BoxStatus,
}

/// Minimize `fg` over `[lower, upper]` starting from `x0` (clipped).
///
/// `fg(x, None)` returns the value only; `fg(x, Some(g))` must also fill the
/// gradient. Non-finite values are treated as rejected trial points.
pub fn minimize_box<F>(mut fg: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &BoxOptions) -> BoxResult
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, Some(&mut g));
    if !f.is_finite() || !all_finite(&g) {
        return BoxResult {
            pg_norm: f64::INFINITY,
            x,
            f,
            gradient: g,
            iterations: 0,
            status: BoxStatus::NonFiniteStart,
        };
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut g_new = vec![0.0; n];
    let mut x_trial = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut free = vec![true; n];
    let mut status = BoxStatus::MaxIterations;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it;
        let pg = projected_gradient_norm(&x, &g, lower, upper);
        if pg <= opts.pg_tol {
            status = BoxStatus::Converged;
            break;
        }

        for i in 0..n {
            let at_lower = x[i] <= lower[i] && g[i] > 0.0;
            let at_upper = x[i] >= upper[i] && g[i] < 0.0;
            free[i] = !(at_lower || at_upper);
        }

        two_loop(&g, &free, &memory, &mut d);
        let mut slope = dot(&g, &d);
        if memory.is_empty() || slope >= 0.0 || !all_finite(&d) {
            memory.clear();
            let gmax = g
                .iter()
                .zip(&free)
                .filter(|(_, &fr)| fr)
                .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
            if gmax == 0.0 {
                status = BoxStatus::Converged;
                break;
            }
            for i in 0..n {
                d[i] = if free[i] { -g[i] * opts.initial_step / gmax } else { 0.0 };
            }
            slope = dot(&g, &d);
        }

        // Backtracking along the projection arc.
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut have_grad = false;
        for _ in 0..60 {
            for i in 0..n {
                x_trial[i] = (x[i] + alpha * d[i]).clamp(lower[i], upper[i]);
            }
            if x_trial == x {
                break;
            }
            let f_trial = fg(&x_trial, None);
            let decrease: f64 = g.iter().zip(x_trial.iter().zip(&x)).map(|(gi, (xt, xi))| gi * (xt - xi)).sum();
            if f_trial.is_finite() && f_trial <= f + 1e-4 * decrease.min(0.0) && f_trial <= f {
                accepted = true;
                break;
            }
            // Near a minimizer the decrease drowns in round-off; accept a step
            // that keeps f level and clearly reduces the projected gradient.
            if f_trial.is_finite() && f_trial <= f + 1e-12 * f.abs().max(1.0) {
                let ft = fg(&x_trial, Some(&mut g_new));
                if ft.is_finite() && all_finite(&g_new) && projected_gradient_norm(&x_trial, &g_new, lower, upper) < 0.5 * pg {
                    accepted = true;
                    have_grad = true;
                    break;
                }
            }
            if f_trial.is_finite() && alpha == 1.0 && slope < 0.0 {
                // one quadratic interpolation step, then plain halving
                let denom = 2.0 * (f_trial - f - slope);
                let a = if denom > 0.0 { -slope / denom } else { 0.5 };
                alpha = a.clamp(0.1, 0.5);
            } else {
                alpha *= 0.5;
            }
        }
        if !accepted {
            status = BoxStatus::LineSearchFailed;
            break;
        }

        let fx = if have_grad { fg(&x_trial, None) } else { fg(&x_trial, Some(&mut g_new)) };
        if !fx.is_finite() || !all_finite(&g_new) {
            status = BoxStatus::LineSearchFailed;
            break;
        }
        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let f_old = f;
        x.copy_from_slice(&x_trial);
        g.copy_from_slice(&g_new);
        f = fx;
        iterations = it + 1;
        if opts.f_rel_tol > 0.0 && (f_old - f) <= opts.f_rel_tol * f_old.abs().max(f.abs()).max(1.0) {
            status = BoxStatus::SmallDecrease;
            break;
        }
    }

    let pg_norm = projected_gradient_norm(&x, &g, lower, upper);
    if status == BoxStatus::MaxIterations && pg_norm <= opts.pg_tol {
        status = BoxStatus::Converged;
    }
    BoxResult {
        x,
        f,
        gradient: g,
        pg_norm,
        iterations,
        status,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion restricted to the free variables.
fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, d: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        d[i] = if free[i] { g[i] } else { 0.0 };
    }
    if memory.is_empty() {
        d.iter_mut().for_each(|v| *v = -*v);
        return;
    }
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * masked_dot(s, d, free);
        for i in 0..n {
            if free[i] {
                d[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    let (s, y, _) = memory.back().unwrap();
    let yy = masked_dot(y, y, free);
    let gamma = if yy > 0.0 { masked_dot(s, y, free) / yy } else { 1.0 };
    let gamma = if gamma.is_finite() && gamma > 0.0 { gamma } else { 1.0 };
    d.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * masked_dot(y, d, free);
        for i in 0..n {
            if free[i] {
                d[i] += (a - b) * s[i];
            }
        }
    }
    d.iter_mut().for_each(|v| *v = -*v);
}

fn masked_dot(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}
