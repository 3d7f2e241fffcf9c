//! Multinomial logistic regression trained by full-batch gradient descent
//! with a backtracking (Armijo) line search.
//!
//! Features are standardized with training mean / std; zero-variance columns
//! are dropped. The objective is mean cross-entropy plus `(l2 / 2) * ||W||^2`
//! (bias not penalized).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_data, softmax_in_place};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop when the gradient's max-norm falls below this.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1.0,
            max_iter: 300,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Input width before column dropping.
    pub input_width: usize,
    /// Kept input columns.
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut columns = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for j in 0..x.cols() {
            let m = (0..x.rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
            let var = (0..x.rows()).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                columns.push(j);
                mean.push(m);
                std.push(s);
            }
        }
        Standardizer {
            input_width: x.cols(),
            columns,
            mean,
            std,
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_width {
            return Err(Error::Shape {
                expected: self.input_width,
                found: x.cols(),
            });
        }
        let d = self.columns.len();
        let mut out = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for (k, &j) in self.columns.iter().enumerate() {
                dst[k] = (src[j] - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub class_labels: Vec<String>,
    pub standardizer: Standardizer,
    /// `num_classes x kept_features`, row-major.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub l2: f64,
    /// Iterations run and whether the gradient tolerance was met.
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegModel {
    pub fn num_features(&self) -> usize {
        self.standardizer.input_width
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.standardizer.transform(x)?;
        let k = self.class_labels.len();
        let mut out = Matrix::zeros(z.rows(), k);
        for i in 0..z.rows() {
            let row = z.row(i);
            let o = out.row_mut(i);
            for (c, oc) in o.iter_mut().enumerate() {
                *oc = self.bias[c] + dot(self.weights.row(c), row);
            }
            softmax_in_place(o);
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Training objective over already-standardized inputs. Parameters are a flat
/// vector: `K x d` weights row-major, then `K` biases.
pub struct Objective<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub num_classes: usize,
    pub l2: f64,
}

const CHUNK: usize = 64;

impl Objective<'_> {
    pub fn num_params(&self) -> usize {
        self.num_classes * (self.x.cols() + 1)
    }

    /// Inverse curvature bounds used to scale descent steps: the softmax
    /// Hessian is bounded by one half per unit-variance input.
    pub fn preconditioner(&self) -> Vec<f64> {
        let kd = self.num_classes * self.x.cols();
        (0..self.num_params())
            .map(|j| if j < kd { 1.0 / (0.5 + self.l2) } else { 2.0 })
            .collect()
    }

    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.num_classes * self.x.cols())
    }

    fn logits(&self, w: &[f64], b: &[f64], row: &[f64], out: &mut [f64]) {
        let d = self.x.cols();
        for (c, o) in out.iter_mut().enumerate() {
            *o = b[c] + dot(&w[c * d..(c + 1) * d], row);
        }
    }

    /// Mean cross-entropy plus the L2 penalty.
    pub fn loss(&self, params: &[f64]) -> f64 {
        let (w, b) = self.split(params);
        let k = self.num_classes;
        let n = self.x.rows();
        // Chunk sums are combined in chunk order, so the result does not
        // depend on the thread count.
        let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ch| {
                let mut z = vec![0.0; k];
                let mut s = 0.0;
                for i in ch * CHUNK..((ch + 1) * CHUNK).min(n) {
                    self.logits(w, b, self.x.row(i), &mut z);
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    s += lse - z[self.y[i]];
                }
                s
            })
            .collect();
        let ce = parts.iter().sum::<f64>() / n as f64;
        ce + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of [`Objective::loss`].
    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.loss_and_gradient(params).1
    }

    /// Loss and gradient in one pass over the rows.
    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = self.split(params);
        let k = self.num_classes;
        let d = self.x.cols();
        let n = self.x.rows();
        let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ch| {
                let mut g = vec![0.0; k * (d + 1)];
                let mut p = vec![0.0; k];
                let mut s = 0.0;
                for i in ch * CHUNK..((ch + 1) * CHUNK).min(n) {
                    let row = self.x.row(i);
                    self.logits(w, b, row, &mut p);
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    s += lse - p[self.y[i]];
                    softmax_in_place(&mut p);
                    p[self.y[i]] -= 1.0;
                    for c in 0..k {
                        let e = p[c];
                        if e != 0.0 {
                            let gw = &mut g[c * d..(c + 1) * d];
                            for (gj, xj) in gw.iter_mut().zip(row) {
                                *gj += e * xj;
                            }
                        }
                        g[k * d + c] += e;
                    }
                }
                (s, g)
            })
            .collect();
        let mut g = vec![0.0; k * (d + 1)];
        let mut ce = 0.0;
        for (s, part) in &parts {
            ce += s;
            for (a, v) in g.iter_mut().zip(part) {
                *a += v;
            }
        }
        let inv = 1.0 / n as f64;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj *= inv;
            if j < k * d {
                *gj += self.l2 * w[j];
            }
        }
        let loss = ce * inv + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        (loss, g)
    }
}

/// Result of [`minimize`]: parameters, iterations, convergence flag and the
/// objective value after every accepted step (first entry is the start).
pub struct Descent {
    pub params: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Diagonally preconditioned gradient descent with an Armijo backtracking
/// line search. The trial step is the Barzilai-Borwein step from the previous
/// iteration, measured in the preconditioned metric; it is halved until the
/// sufficient-decrease condition holds, so accepted steps always lower the
/// objective.
pub fn minimize(obj: &Objective<'_>, mut params: Vec<f64>, max_iter: usize, tol: f64) -> Descent {
    const ARMIJO: f64 = 1e-4;
    let precond = obj.preconditioner();
    let (mut f, mut g) = obj.loss_and_gradient(&params);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < tol {
            converged = true;
            break;
        }
        let dir: Vec<f64> = g.iter().zip(&precond).map(|(gi, pi)| gi * pi).collect();
        let gd: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, di)| p - t * di).collect();
            let (ft, gt) = obj.loss_and_gradient(&trial);
            if ft <= f - ARMIJO * t * gd {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((next, fnext, gnext)) = accepted else {
            // No decrease representable in floating point.
            converged = true;
            break;
        };
        let sy: f64 = next
            .iter()
            .zip(&params)
            .zip(gnext.iter().zip(&g))
            .map(|((a, b), (c, d))| (a - b) * (c - d))
            .sum();
        let ss: f64 = next
            .iter()
            .zip(&params)
            .zip(&precond)
            .map(|((a, b), p)| (a - b).powi(2) / p)
            .sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e4) } else { t * 2.0 };
        params = next;
        f = fnext;
        g = gnext;
        trace.push(f);
        iterations += 1;
    }
    Descent {
        params,
        iterations,
        converged,
        trace,
    }
}

pub fn train_logreg(x: &Matrix, y: &[usize], class_labels: &[String], config: &LogRegConfig) -> Result<LogRegModel> {
    let k = class_labels.len();
    check_training_data(x, y, k)?;
    if !(config.l2 >= 0.0 && config.l2.is_finite()) {
        return Err(Error::invalid("l2 must be a non-negative number"));
    }
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x)?;
    let obj = Objective {
        x: &z,
        y,
        num_classes: k,
        l2: config.l2,
    };
    let d = z.cols();
    let start = vec![0.0; obj.num_params()];
    let run = minimize(&obj, start, config.max_iter, config.tol);
    let (w, b) = run.params.split_at(k * d);
    Ok(LogRegModel {
        class_labels: class_labels.to_vec(),
        standardizer,
        weights: Matrix::from_vec(k, d, w.to_vec())?,
        bias: b.to_vec(),
        l2: config.l2,
        iterations: run.iterations,
        converged: run.converged,
    })
}
