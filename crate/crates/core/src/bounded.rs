//! Minimisation over the non-negative orthant.
//!
//! Two first-order methods share one projected Armijo line search:
//!
//! * a limited-memory quasi-Newton method. The search direction comes from
//!   the usual two-loop recursion applied to the gradient restricted to the
//!   free variables; variables sitting on the bound with an outward
//!   gradient are held fixed for the step, and iterates are clamped at 0.
//! * projected gradient descent with Barzilai-Borwein step lengths.
//!
//! Both accept a step only if it satisfies the sufficient-decrease test
//! `f(P(x + a d)) <= f(x) + c1 * g'(P(x + a d) - x)`, so the objective never
//! increases across accepted iterations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QuasiNewtonBounded,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedOptions {
    pub method: Method,
    pub max_iterations: usize,
    /// Stop once `(f_prev - f) / max(|f_prev|, tiny)` drops below this.
    pub tolerance: f64,
    /// Number of correction pairs kept by the quasi-Newton method.
    pub memory: usize,
    pub max_backtracks: usize,
}

impl Default for BoundedOptions {
    fn default() -> Self {
        BoundedOptions {
            method: Method::QuasiNewtonBounded,
            max_iterations: 500,
            tolerance: 1e-8,
            memory: 10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RelativeChange,
    Stationary,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct BoundedResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Objective after the starting point and after every accepted step.
    pub history: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradient with the components of bound-active variables zeroed.
fn free_gradient(x: &[f64], g: &[f64], out: &mut [f64]) {
    for ((o, &xi), &gi) in out.iter_mut().zip(x).zip(g) {
        *o = if xi <= 0.0 && gi > 0.0 { 0.0 } else { gi };
    }
}

struct Evaluator<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Evaluator<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        (self.f)(x, g)
    }
}

/// Minimises `objective` subject to `x >= 0`, starting from `x0`.
///
/// `objective(x, grad)` returns the value and writes the gradient.
pub fn minimize_nonnegative<F>(objective: F, x0: Vec<f64>, opts: &BoundedOptions) -> Result<BoundedResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", opts.tolerance)));
    }
    let n = x0.len();
    let mut eval = Evaluator {
        f: objective,
        evaluations: 0,
    };
    let mut x: Vec<f64> = x0.into_iter().map(|v| v.max(0.0)).collect();
    let mut g = vec![0.0; n];
    let mut fx = eval.eval(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::OptimizationFailed(format!("non-finite objective {fx} at the starting point")));
    }
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut pg = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut last_bb: Option<f64> = None;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        free_gradient(&x, &g, &mut pg);
        let pg_norm = norm(&pg);
        if pg_norm == 0.0 || fx == 0.0 {
            stop = StopReason::Stationary;
            break;
        }

        let mut initial_step = 1.0;
        match opts.method {
            Method::QuasiNewtonBounded => {
                if pairs.is_empty() {
                    d.iter_mut().zip(&pg).for_each(|(di, gi)| *di = -gi);
                    initial_step = (1.0 / pg_norm).min(1.0);
                } else {
                    two_loop(&pairs, &pg, &mut d);
                    for ((di, &xi), &gi) in d.iter_mut().zip(&x).zip(&g) {
                        if xi <= 0.0 && gi > 0.0 {
                            *di = 0.0;
                        }
                    }
                    if dot(&d, &g) >= 0.0 {
                        pairs.clear();
                        d.iter_mut().zip(&pg).for_each(|(di, gi)| *di = -gi);
                        initial_step = (1.0 / pg_norm).min(1.0);
                    }
                }
            }
            Method::ProjectedGradient => {
                d.iter_mut().zip(&pg).for_each(|(di, gi)| *di = -gi);
                initial_step = last_bb.unwrap_or((1.0 / pg_norm).min(1.0));
            }
        }

        let mut step = initial_step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            for ((xn, &xi), &di) in x_new.iter_mut().zip(&x).zip(&d) {
                *xn = (xi + step * di).max(0.0);
            }
            let decrease: f64 = x_new.iter().zip(&x).zip(&g).map(|((a, b), gi)| gi * (a - b)).sum();
            let f_trial = eval.eval(&x_new, &mut g_new);
            if f_trial.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && f_trial <= fx + ARMIJO_C1 * decrease
                && decrease <= 0.0
            {
                accepted = Some(f_trial);
                break;
            }
            step *= 0.5;
        }

        let Some(f_next) = accepted else {
            if opts.method == Method::QuasiNewtonBounded && !pairs.is_empty() {
                pairs.clear();
                continue;
            }
            stop = StopReason::LineSearchFailed;
            break;
        };

        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        if sy > 1e-12 * ss.sqrt() * norm(&y) && sy > 0.0 {
            last_bb = Some(ss / sy);
            if opts.method == Method::QuasiNewtonBounded {
                if pairs.len() == opts.memory.max(1) {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
        } else {
            last_bb = None;
        }

        let f_prev = fx;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_next;
        history.push(fx);

        let rel = (f_prev - fx) / f_prev.abs().max(f64::MIN_POSITIVE);
        if rel < opts.tolerance {
            stop = StopReason::RelativeChange;
            break;
        }
    }

    log::debug!(
        "bounded minimisation stopped after {iterations} iterations ({} evaluations): {stop:?}, f = {fx:e}",
        eval.evaluations
    );
    Ok(BoundedResult {
        x,
        value: fx,
        iterations,
        stop,
        history,
    })
}

/// `d = -H q` via the L-BFGS two-loop recursion.
fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, q_in: &[f64], d: &mut [f64]) {
    let mut q = q_in.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (idx, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[idx] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    let (s, y, _) = pairs.back().expect("two_loop needs at least one pair");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|qi| *qi *= gamma);
    for (idx, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        let coef = alphas[idx] - b;
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += coef * si);
    }
    d.iter_mut().zip(&q).for_each(|(di, qi)| *di = -qi);
}
