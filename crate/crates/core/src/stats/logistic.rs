//! Ridge-penalized multinomial logistic regression (full softmax).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{bfgs, BfgsOptions};
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialLogit {
    pub classes: usize,
    /// Feature centering and scaling applied before the linear predictor.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row k holds the intercept followed by the standardized-feature weights of class k.
    pub weights: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

/// Penalized objective on standardized features with an intercept column.
pub struct LogitObjective<'a> {
    z: DMatrix<f64>,
    y: &'a [u32],
    classes: usize,
    ridge: f64,
}

impl<'a> LogitObjective<'a> {
    fn new(x: &DMatrix<f64>, y: &'a [u32], classes: usize, ridge: f64) -> (Self, Vec<f64>, Vec<f64>) {
        let (n, p) = x.shape();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for c in 0..p {
            let col = x.column(c);
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            center[c] = m;
            scale[c] = if sd > 0.0 { sd } else { 1.0 };
        }
        let z = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { (x[(r, c - 1)] - center[c - 1]) / scale[c - 1] });
        (Self { z, y, classes, ridge }, center, scale)
    }

    /// Mean negative log-likelihood plus `ridge/2 ‖W‖²` and its gradient.
    /// Parameters are the K × (p+1) weights in row-major order.
    pub fn value_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let (n, d) = self.z.shape();
        let k = self.classes;
        let wm = DMatrix::from_row_slice(k, d, w);
        let scores = &self.z * wm.transpose();
        let mut resid = DMatrix::zeros(n, k);
        let mut nll = 0.0;
        for r in 0..n {
            let row = scores.row(r);
            let mx = row.max();
            let lse = mx + row.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
            let yr = self.y[r] as usize;
            nll += lse - row[yr];
            for c in 0..k {
                resid[(r, c)] = (row[c] - lse).exp() - if c == yr { 1.0 } else { 0.0 };
            }
        }
        let nf = n as f64;
        let grad = resid.transpose() * &self.z / nf + self.ridge * &wm;
        let value = nll / nf + 0.5 * self.ridge * wm.norm_squared();
        let mut g = Vec::with_capacity(k * d);
        for c in 0..k {
            g.extend(grad.row(c).iter());
        }
        (value, g)
    }

    pub fn dim(&self) -> usize {
        self.classes * self.z.ncols()
    }
}

/// Public handle on the training objective, for derivative checks.
pub fn logit_objective<'a>(x: &DMatrix<f64>, y: &'a [u32], classes: usize, ridge: f64) -> LogitObjective<'a> {
    LogitObjective::new(x, y, classes, ridge).0
}

/// Fits `classes` softmax outputs on features `x` (no intercept column).
pub fn fit_multinomial_logistic(x: &DMatrix<f64>, y: &[u32], classes: usize, ridge: f64) -> Result<MultinomialLogit> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("logistic: length mismatch"));
    }
    if ridge < 0.0 {
        return Err(Error::invalid("logistic: ridge must be non-negative"));
    }
    if y.iter().any(|&c| c as usize >= classes) {
        return Err(Error::invalid("logistic: class code out of range"));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::invalid("logistic: target has a single class"));
    }
    let (obj, center, scale) = LogitObjective::new(x, y, classes, ridge);
    let res = bfgs(
        |w| {
            let (v, g) = obj.value_and_gradient(w.as_slice());
            (v, DVector::from_vec(g))
        },
        DVector::zeros(obj.dim()),
        BfgsOptions {
            max_iter: 1000,
            grad_tol: 1e-8,
            f_tol: 0.0,
        },
    );
    let d = obj.z.ncols();
    Ok(MultinomialLogit {
        classes,
        center,
        scale,
        weights: (0..classes).map(|c| res.x.as_slice()[c * d..(c + 1) * d].to_vec()).collect(),
        converged: res.converged,
        iterations: res.iterations,
    })
}

impl MultinomialLogit {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..x.nrows())
            .map(|r| {
                let s: Vec<f64> = self
                    .weights
                    .iter()
                    .map(|w| {
                        w[0] + (0..x.ncols())
                            .map(|c| w[c + 1] * (x[(r, c)] - self.center[c]) / self.scale[c])
                            .sum::<f64>()
                    })
                    .collect();
                let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let t: f64 = e.iter().sum();
                e.into_iter().map(|v| v / t).collect()
            })
            .collect()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<u32> {
        self.predict_proba(x)
            .into_iter()
            .map(|p| {
                let mut best = 0;
                for (k, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect()
    }
}
