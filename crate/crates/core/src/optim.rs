//! Small first-order minimizers shared by the fitter and the scene optimizer.

use std::collections::VecDeque;

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>);

    /// Maps an arbitrary point back into the feasible set.
    fn project(&self, _x: &mut [f64]) {}

    /// Called after every accepted step. Implementations may re-express `x`
    /// in a new chart (for example folding a rotation increment into a
    /// reference rotation) as long as the represented point is unchanged.
    fn accept(&mut self, _x: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the relative decrease over `window` iterations drops below this.
    pub rel_tol: f64,
    pub window: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Upper bound on the infinity norm of a single step.
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iters: 100,
            rel_tol: 1e-6,
            window: 5,
            armijo: 1e-4,
            max_backtracks: 30,
            max_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Limited-memory BFGS with projected Armijo backtracking. Accepted values
/// never increase.
pub fn lbfgs<O: Objective>(objective: &mut O, x0: &[f64], cfg: &LbfgsConfig) -> Minimum {
    let mut x = x0.to_vec();
    objective.project(&mut x);
    let (mut f, mut g) = objective.value_and_gradient(&x);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        if !f.is_finite() || g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if history.is_empty() {
            (cfg.max_step * 0.1 / dmax).min(1.0)
        } else {
            (cfg.max_step / dmax).min(1.0)
        };

        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            objective.project(&mut trial);
            let (ft, gt) = objective.value_and_gradient(&trial);
            let actual: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft.is_finite() && ft < f && ft <= f + cfg.armijo * dot(&g, &actual).min(0.0) {
                accepted = Some((trial, ft, gt, actual));
                break;
            }
            step *= 0.5;
        }

        let Some((mut trial, ft, gt, s)) = accepted else {
            if history.is_empty() {
                converged = true;
                break;
            }
            history.clear();
            continue;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > cfg.memory {
                history.pop_front();
            }
        }
        objective.accept(&mut trial);
        x = trial;
        f = ft;
        g = gt;
        iterations += 1;
        trace.push(f);

        if trace.len() > cfg.window {
            let old = trace[trace.len() - 1 - cfg.window];
            if old - f <= cfg.rel_tol * old.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }
    Minimum {
        x,
        value: f,
        iterations,
        trace,
        converged,
    }
}
