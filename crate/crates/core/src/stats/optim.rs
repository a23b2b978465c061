//! BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when a step changes the objective by less than this (relative).
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Minimizes `f`, which returns the value and gradient. Non-finite values
/// are treated as +inf by the line search.
pub fn bfgs<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    let mut converged = g.amax() < opts.grad_tol;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter && fx.is_finite() {
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + t * &d;
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent possible at machine precision.
            converged = g.amax() < opts.grad_tol.sqrt();
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let change = (fx - fn_).abs();
        x = xn;
        g = gn;
        let prev = fx;
        fx = fn_;
        trace.push(fx);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho(s hyᵀ + hy sᵀ) + (rho² yᵀHy + rho) s sᵀ
            h -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }
        if g.amax() < opts.grad_tol {
            converged = true;
        } else if change <= opts.f_tol * prev.abs().max(1.0) {
            converged = g.amax() < opts.grad_tol.sqrt();
            break;
        }
    }
    BfgsResult {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
        trace,
    }
}
