//! L2-regularized logistic regression over sparse features, trained with
//! L-BFGS and a backtracking Armijo line search.
//!
//! The objective is the mean log-loss plus `l2 / (2n) * ||w||²`; the bias is
//! not regularized. Line search only accepts steps that satisfy the Armijo
//! condition, so the recorded loss sequence never increases.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::textfeat::SparseVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1.0, max_iter: 1000, grad_tol: 1e-6, memory: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective value at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn decision(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    pub fn predict_proba(&self, x: &SparseVector) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Objective value and gradient. The returned gradient has length
/// `dim + 1`; the last entry is the bias component.
pub fn objective(params: &[f64], xs: &[SparseVector], ys: &[bool], l2: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let (w, b) = (&params[..dim], params[dim]);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for (x, &y) in xs.iter().zip(ys) {
        let z = x.dot_dense(w) + b;
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (i, v) in x.iter() {
            grad[i] += r * v;
        }
        grad[dim] += r;
    }
    let mut reg = 0.0;
    for (g, wi) in grad[..dim].iter_mut().zip(w) {
        *g = *g / n + l2 / n * wi;
        reg += wi * wi;
    }
    grad[dim] /= n;
    (loss / n + 0.5 * l2 / n * reg, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Fits a model on `xs` (all of dimension `dim`) with binary targets `ys`.
pub fn train(xs: &[SparseVector], ys: &[bool], dim: usize, config: &LogisticConfig) -> (LogisticModel, TrainReport) {
    assert_eq!(xs.len(), ys.len(), "features and labels must align");
    let mut params = vec![0.0; dim + 1];
    let (mut f, mut g) = objective(&params, xs, ys, config.l2);
    let mut losses = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;
    let mut converged = norm(&g) <= config.grad_tol;

    while !converged && iterations < config.max_iter {
        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|x| -x).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if history.is_empty() { 1.0 / norm(&g).max(1.0) } else { 1.0 };
        let accepted = loop {
            let trial: Vec<f64> = params.iter().zip(&d).map(|(p, di)| p + step * di).collect();
            let (f_new, g_new) = objective(&trial, xs, ys, config.l2);
            if f_new <= f + 1e-4 * step * slope {
                break Some((trial, f_new, g_new));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((trial, f_new, g_new)) = accepted else { break };

        let s: Vec<f64> = trial.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        params = trial;
        f = f_new;
        g = g_new;
        losses.push(f);
        iterations += 1;
        converged = norm(&g) <= config.grad_tol;
    }

    let bias = params.pop().unwrap_or(0.0);
    let report = TrainReport { losses, grad_norm: norm(&g), iterations, converged };
    (LogisticModel { weights: params, bias }, report)
}
