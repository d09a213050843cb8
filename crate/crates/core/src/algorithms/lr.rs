// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{ExtractError, LayerActivations};
use crate::linalg::{self, Matrix};

/// Training settings for the logistic-regression probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrConfig {
    /// L2 penalty on the weights (not the bias).
    pub lambda: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Weight norms below this are reported as degenerate.
    pub min_weight_norm: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            grad_tol: 1e-8,
            max_iters: 10_000,
            min_weight_norm: 1e-6,
        }
    }
}

/// Weight vector of an L2-regularized logistic regression separating the
/// positive rows (label 1) from the negative rows (label 0), normalized and
/// oriented toward the positive class.
pub fn lr_vector(acts: &LayerActivations) -> Result<Vec<f64>, ExtractError> {
    lr_vector_with(acts, &LrConfig::default())
}

pub fn lr_vector_with(acts: &LayerActivations, cfg: &LrConfig) -> Result<Vec<f64>, ExtractError> {
    let problem = Problem::new(acts.pos(), acts.neg(), cfg.lambda);
    let (w, _bias) = problem.fit(cfg)?;
    let norm = linalg::norm(&w);
    if norm < cfg.min_weight_norm {
        return Err(ExtractError::degenerate(
            "lr",
            format!("weight norm {norm:e} carries no signal"),
        ));
    }
    let mut v = w;
    linalg::scale(&mut v, 1.0 / norm);
    let toward_pos = linalg::sub(&acts.pos().column_mean(), &acts.neg().column_mean());
    linalg::align_sign(&mut v, &toward_pos);
    Ok(v)
}

struct Problem<'a> {
    pos: &'a Matrix,
    neg: &'a Matrix,
    lambda: f64,
    m: f64,
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'a> Problem<'a> {
    fn new(pos: &'a Matrix, neg: &'a Matrix, lambda: f64) -> Self {
        Self {
            pos,
            neg,
            lambda,
            m: (pos.rows() + neg.rows()) as f64,
        }
    }

    fn labelled(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.pos
            .iter_rows()
            .map(|r| (r, 1.0))
            .chain(self.neg.iter_rows().map(|r| (r, 0.0)))
    }

    /// Mean log-loss plus `λ/2 ‖w‖²`; the last entry of `theta` is the bias.
    fn loss(&self, theta: &[f64]) -> f64 {
        let (w, b) = theta.split_at(theta.len() - 1);
        let data = self.labelled().fold(0.0, |acc, (x, y)| {
            let z = linalg::dot(w, x) + b[0];
            acc + softplus(z) - y * z
        });
        data / self.m + 0.5 * self.lambda * linalg::dot(w, w)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = theta.len() - 1;
        let (w, b) = theta.split_at(d);
        let mut g = vec![0.0; d + 1];
        for (x, y) in self.labelled() {
            let r = sigmoid(linalg::dot(w, x) + b[0]) - y;
            for (gi, xi) in g[..d].iter_mut().zip(x) {
                *gi += r * xi;
            }
            g[d] += r;
        }
        linalg::scale(&mut g, 1.0 / self.m);
        for (gi, wi) in g[..d].iter_mut().zip(w) {
            *gi += self.lambda * wi;
        }
        g
    }

    /// Full-batch gradient descent. The trial step is the Barzilai–Borwein
    /// estimate from the previous iterate, then halved until the Armijo
    /// condition holds. Near the optimum the loss decrease falls below f64
    /// resolution, so the condition tolerates a rounding-sized slack.
    fn fit(&self, cfg: &LrConfig) -> Result<(Vec<f64>, f64), ExtractError> {
        let dim = self.pos.cols() + 1;
        let mut theta = vec![0.0; dim];
        let mut loss = self.loss(&theta);
        let mut grad = self.gradient(&theta);
        let mut step = 1.0;
        for _ in 0..cfg.max_iters {
            let gnorm = linalg::norm(&grad);
            if gnorm <= cfg.grad_tol {
                let bias = theta.pop().expect("bias entry");
                return Ok((theta, bias));
            }
            let gg = gnorm * gnorm;
            let slack = 4.0 * f64::EPSILON * loss.abs().max(1.0);
            let mut t = step;
            let mut candidate;
            let mut cand_loss;
            loop {
                candidate = theta.iter().zip(&grad).map(|(p, g)| p - t * g).collect::<Vec<_>>();
                cand_loss = self.loss(&candidate);
                if cand_loss <= loss - 1e-4 * t * gg + slack || t < 1e-20 {
                    break;
                }
                t *= 0.5;
            }
            let new_grad = self.gradient(&candidate);
            let s = linalg::sub(&candidate, &theta);
            let yk = linalg::sub(&new_grad, &grad);
            let sy = linalg::dot(&s, &yk);
            step = if sy > 0.0 {
                (linalg::dot(&s, &s) / sy).min(1e6)
            } else {
                t.max(1e-6) * 2.0
            };
            theta = candidate;
            loss = cand_loss;
            grad = new_grad;
        }
        let grad_norm = linalg::norm(&grad);
        if grad_norm <= cfg.grad_tol {
            let bias = theta.pop().expect("bias entry");
            return Ok((theta, bias));
        }
        Err(ExtractError::NoConvergence {
            iterations: cfg.max_iters,
            grad_norm,
        })
    }
}
