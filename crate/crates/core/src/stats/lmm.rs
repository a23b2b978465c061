//! Linear mixed models with a random intercept and at most one random slope,
//! fitted by profiled REML on per-cluster sufficient statistics.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::ols::independent_columns;
use super::optim::{bfgs, BfgsOptions};
use super::wald::WaldInterval;
use crate::error::{Error, Result};

/// Variance ratios below this are treated as zero.
pub const RATIO_FLOOR: f64 = 1e-8;
const PHI_MAX: f64 = 18.420680743952367; // ln(1e8)

struct ClusterStats {
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
}

/// Profiled REML criterion for `y = Xβ + Zb + e`, with the random-effect
/// covariance written as `σ² ΛΛᵀ`.
pub struct RemlProblem {
    n: usize,
    p: usize,
    q: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    clusters: Vec<ClusterStats>,
    /// Position of each data cluster in the caller's indexing.
    ids: Vec<usize>,
}

struct Evaluation {
    deviance: f64,
    s: DMatrix<f64>,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    r2: f64,
    u: Vec<DVector<f64>>,
}

fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl RemlProblem {
    /// `slope` is a column of `x` that also gets a random coefficient.
    pub fn new(y: &[f64], x: &DMatrix<f64>, cluster: &[usize], slope: Option<usize>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || cluster.len() != n {
            return Err(Error::invalid("mixed model: length mismatch"));
        }
        let p = x.ncols();
        let q = if slope.is_some() { 2 } else { 1 };
        let n_ids = cluster.iter().max().map_or(0, |m| m + 1);
        let mut slot = vec![usize::MAX; n_ids];
        let mut ids = Vec::new();
        let mut clusters: Vec<ClusterStats> = Vec::new();
        for (r, &j) in cluster.iter().enumerate() {
            if slot[j] == usize::MAX {
                slot[j] = clusters.len();
                ids.push(j);
                clusters.push(ClusterStats {
                    ztz: DMatrix::zeros(q, q),
                    ztx: DMatrix::zeros(q, p),
                    zty: DVector::zeros(q),
                });
            }
            let c = &mut clusters[slot[j]];
            let z = [1.0, slope.map_or(0.0, |s| x[(r, s)])];
            for a in 0..q {
                for b in 0..q {
                    c.ztz[(a, b)] += z[a] * z[b];
                }
                for k in 0..p {
                    c.ztx[(a, k)] += z[a] * x[(r, k)];
                }
                c.zty[a] += z[a] * y[r];
            }
        }
        let yv = DVector::from_column_slice(y);
        Ok(Self {
            n,
            p,
            q,
            xtx: x.transpose() * x,
            xty: x.transpose() * &yv,
            yty: yv.norm_squared(),
            clusters,
            ids,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    fn lambda(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.q, self.q);
        let mut k = 0;
        for j in 0..self.q {
            for i in j..self.q {
                l[(i, j)] = theta[k];
                k += 1;
            }
        }
        l
    }

    fn evaluate(&self, lambda: &DMatrix<f64>) -> Option<Evaluation> {
        let (p, q) = (self.p, self.q);
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut c = self.yty;
        let mut logdet_m = 0.0;
        let mut parts = Vec::with_capacity(self.clusters.len());
        let eye = DMatrix::<f64>::identity(q, q);
        for cl in &self.clusters {
            let m = &eye + lambda.transpose() * &cl.ztz * lambda;
            let chol = Cholesky::new(m)?;
            logdet_m += chol_logdet(&chol);
            let k = lambda * chol.inverse() * lambda.transpose();
            let ztz_k = &cl.ztz * &k;
            let zhz = &cl.ztz - &ztz_k * &cl.ztz;
            let zhx = &cl.ztx - &ztz_k * &cl.ztx;
            let zhy = &cl.zty - &ztz_k * &cl.zty;
            let kx = &k * &cl.ztx;
            a -= cl.ztx.transpose() * &kx;
            b -= kx.transpose() * &cl.zty;
            c -= cl.zty.dot(&(&k * &cl.zty));
            parts.push((zhz, zhx, zhy));
        }
        let a_chol = Cholesky::new(a)?;
        let beta = a_chol.solve(&b);
        let r2 = c - b.dot(&beta);
        if !(r2 > 0.0) {
            return None;
        }
        let dfr = (self.n - p) as f64;
        let deviance = logdet_m + chol_logdet(&a_chol) + dfr * (1.0 + (2.0 * std::f64::consts::PI * r2 / dfr).ln());
        let a_inv = a_chol.inverse();
        let mut s = DMatrix::zeros(q, q);
        let mut u = Vec::with_capacity(parts.len());
        for (zhz, zhx, zhy) in parts {
            let uj = &zhy - &zhx * &beta;
            s += zhz - &zhx * &a_inv * zhx.transpose();
            s -= (dfr / r2) * &uj * uj.transpose();
            u.push(uj);
        }
        Some(Evaluation {
            deviance,
            s,
            beta,
            a_inv,
            r2,
            u,
        })
    }

    /// REML deviance and its gradient in the lower-triangular entries of Λ
    /// (column-major: l11, l21, l22). `None` where the criterion is undefined.
    pub fn deviance_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let l = self.lambda(theta);
        let ev = self.evaluate(&l)?;
        let g = 2.0 * &ev.s * &l;
        let mut grad = Vec::new();
        for j in 0..self.q {
            for i in j..self.q {
                grad.push(g[(i, j)]);
            }
        }
        Some((ev.deviance, grad))
    }

    fn at_ratio(&self, ratio: f64) -> Option<Evaluation> {
        self.evaluate(&DMatrix::from_element(1, 1, ratio.sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// Design positions of the kept fixed-effect columns.
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    pub sigma2: f64,
    pub tau2_intercept: f64,
    pub tau2_slope: Option<f64>,
    pub tau_intercept_slope: Option<f64>,
    /// Design column with a random slope, when the slope model was retained.
    pub slope_column: Option<usize>,
    /// Random-effect predictions per cluster index: intercept, then slope.
    pub blups: Vec<Vec<f64>>,
    pub seen: Vec<bool>,
    pub converged: bool,
    pub fallback_applied: bool,
    pub iterations: usize,
    pub reml_deviance: f64,
    /// Criterion values visited by the optimizer.
    pub trace: Vec<f64>,
    #[serde(skip)]
    pub cov: DMatrix<f64>,
}

/// How predictions use the fitted random effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionRule {
    /// Fixed effects plus the cluster's predicted random effects.
    Multilevel,
    /// Fixed effects only.
    Prior,
    /// Fixed design with cluster dummies.
    OlsFe,
}

impl MixedModelFit {
    pub fn icc(&self) -> f64 {
        let t = self.tau2_intercept;
        if t <= 0.0 {
            0.0
        } else {
            t / (t + self.sigma2)
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.beta[i], self.se[i]))
    }

    pub fn wald_interval(&self, name: &str, level: f64) -> Result<WaldInterval> {
        let (est, se) = self
            .coefficient(name)
            .ok_or_else(|| Error::invalid(format!("no coefficient `{name}` in fit")))?;
        WaldInterval::new(est, se, level)
    }

    /// Rows whose cluster has no prediction get the fixed part only.
    pub fn predict(&self, x: &DMatrix<f64>, cluster: &[Option<usize>], rule: PredictionRule) -> Result<Vec<f64>> {
        if rule == PredictionRule::OlsFe {
            return Err(Error::invalid("the OLS-FE rule needs a fixed-effects fit"));
        }
        Ok((0..x.nrows())
            .map(|r| {
                let fixed: f64 = self.kept.iter().zip(&self.beta).map(|(&c, b)| x[(r, c)] * b).sum();
                if rule == PredictionRule::Prior {
                    return fixed;
                }
                match cluster[r].filter(|&j| j < self.seen.len() && self.seen[j]) {
                    Some(j) => {
                        let b = &self.blups[j];
                        fixed + b[0] + self.slope_column.map_or(0.0, |s| b[1] * x[(r, s)])
                    }
                    None => fixed,
                }
            })
            .collect())
    }
}

/// Options for [`fit_lmm`].
#[derive(Debug, Clone, Copy)]
pub struct LmmOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

struct Solution {
    lambda: DMatrix<f64>,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

/// Maximizes the one-parameter criterion over φ = ln(τ²/σ²) by bracketing the
/// sign change of the analytic derivative and bisecting.
fn solve_intercept(problem: &RemlProblem) -> Result<Solution> {
    let deriv = |phi: f64| problem.at_ratio(phi.exp()).map(|e| (e.deviance, e.s[(0, 0)]));
    let mut trace = Vec::new();
    let lo_phi = RATIO_FLOOR.ln();
    let (d0, s0) = deriv(lo_phi).ok_or_else(|| Error::Fit("REML criterion undefined at zero variance".into()))?;
    trace.push(d0);
    if s0 >= 0.0 {
        return Ok(Solution {
            lambda: DMatrix::zeros(1, 1),
            converged: true,
            iterations: 1,
            trace,
        });
    }
    let mut lo = lo_phi;
    let mut hi = None;
    let mut phi = lo_phi;
    let mut iterations = 1;
    while phi < PHI_MAX {
        phi = (phi + 1.0).min(PHI_MAX);
        iterations += 1;
        match deriv(phi) {
            Some((d, s)) if s < 0.0 => {
                lo = phi;
                trace.push(d);
            }
            Some((d, _)) => {
                trace.push(d);
                hi = Some(phi);
                break;
            }
            None => {
                hi = Some(phi);
                break;
            }
        }
    }
    let mut hi = hi.ok_or_else(|| Error::Fit("REML: residual variance collapses to zero".into()))?;
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        match deriv(mid) {
            Some((_, s)) if s < 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    let phi = 0.5 * (lo + hi);
    let (d, _) = deriv(phi).ok_or_else(|| Error::Fit("REML criterion undefined at optimum".into()))?;
    trace.push(d);
    Ok(Solution {
        lambda: DMatrix::from_element(1, 1, (0.5 * phi).exp()),
        converged: true,
        iterations,
        trace,
    })
}

fn solve_slope(problem: &RemlProblem, start: f64, opts: LmmOptions) -> Option<Solution> {
    let l0 = start.sqrt().max(0.1);
    let x0 = DVector::from_vec(vec![l0, 0.0, 0.5 * l0]);
    let res = bfgs(
        |t| match problem.deviance_and_gradient(t.as_slice()) {
            Some((d, g)) => (d, DVector::from_vec(g)),
            None => (f64::INFINITY, DVector::zeros(3)),
        },
        x0,
        BfgsOptions {
            max_iter: opts.max_iter,
            grad_tol: opts.grad_tol,
            ..Default::default()
        },
    );
    res.converged.then(|| Solution {
        lambda: problem.lambda(res.x.as_slice()),
        converged: true,
        iterations: res.iterations,
        trace: res.trace,
    })
}

fn assemble(
    problem: &RemlProblem,
    sol: Solution,
    names: &[String],
    kept: Vec<usize>,
    dropped: Vec<String>,
    n_clusters: usize,
    slope_column: Option<usize>,
    fallback_applied: bool,
) -> Option<MixedModelFit> {
    let ev = problem.evaluate(&sol.lambda)?;
    let g = &sol.lambda * sol.lambda.transpose();
    if g.clone().symmetric_eigenvalues().iter().any(|&e| e < -1e-8) {
        return None;
    }
    let sigma2 = ev.r2 / (problem.n - problem.p) as f64;
    let tau = sigma2 * &g;
    let cov = sigma2 * &ev.a_inv;
    let se: Vec<f64> = (0..problem.p).map(|i| cov[(i, i)]).map(|v| if v >= 0.0 { v.sqrt() } else { f64::NAN }).collect();
    if se.iter().any(|s| !s.is_finite()) {
        return None;
    }
    let mut blups = vec![vec![0.0; problem.q]; n_clusters];
    let mut seen = vec![false; n_clusters];
    for (&j, u) in problem.ids.iter().zip(&ev.u) {
        blups[j] = (&g * u).iter().copied().collect();
        seen[j] = true;
    }
    let q2 = problem.q == 2;
    Some(MixedModelFit {
        names: kept.iter().map(|&c| names[c].clone()).collect(),
        beta: ev.beta.iter().copied().collect(),
        se,
        kept,
        dropped,
        sigma2,
        tau2_intercept: tau[(0, 0)],
        tau2_slope: q2.then(|| tau[(1, 1)]),
        tau_intercept_slope: q2.then(|| tau[(1, 0)]),
        slope_column: if q2 { slope_column } else { None },
        blups,
        seen,
        converged: sol.converged,
        fallback_applied,
        iterations: sol.iterations,
        reml_deviance: ev.deviance,
        trace: sol.trace,
        cov,
    })
}

/// Fits a random-intercept model, or random intercept plus a random slope on
/// design column `slope`. A slope model that fails to converge, loses
/// positive semi-definiteness or has no standard errors is refitted as
/// intercept-only with `fallback_applied` set.
pub fn fit_lmm(
    y: &[f64],
    x: &DMatrix<f64>,
    names: &[String],
    cluster: &[usize],
    n_clusters: usize,
    slope: Option<usize>,
    opts: LmmOptions,
) -> Result<MixedModelFit> {
    if names.len() != x.ncols() {
        return Err(Error::invalid("mixed model: names do not match design"));
    }
    if cluster.iter().any(|&j| j >= n_clusters) {
        return Err(Error::invalid("mixed model: cluster index out of range"));
    }
    let kept = independent_columns(x);
    let dropped: Vec<String> = (0..x.ncols()).filter(|c| !kept.contains(c)).map(|c| names[c].clone()).collect();
    let xk = x.select_columns(&kept);
    let slope_k = slope.and_then(|s| kept.iter().position(|&c| c == s));
    let n = y.len();
    if n <= kept.len() {
        return Err(Error::Fit(format!("mixed model: {n} observations for {} coefficients", kept.len())));
    }
    let base = RemlProblem::new(y, &xk, cluster, None)?;
    if base.n_clusters() < 2 {
        return Err(Error::invalid("mixed model needs at least two clusters"));
    }
    let with_names = |mut fit: MixedModelFit| {
        fit.kept = fit.kept.iter().map(|&k| kept[k]).collect();
        fit.slope_column = fit.slope_column.map(|s| kept[s]);
        fit
    };
    let kn: Vec<String> = kept.iter().map(|&c| names[c].clone()).collect();
    let local: Vec<usize> = (0..kept.len()).collect();
    let intercept = solve_intercept(&base)?;
    let start = intercept.lambda[(0, 0)].powi(2);
    if let Some(s) = slope_k {
        let problem = RemlProblem::new(y, &xk, cluster, Some(s))?;
        if let Some(fit) = solve_slope(&problem, start, opts)
            .and_then(|sol| assemble(&problem, sol, &kn, local.clone(), dropped.clone(), n_clusters, Some(s), false))
        {
            return Ok(with_names(fit));
        }
    }
    let fallback = slope.is_some();
    assemble(&base, intercept, &kn, local, dropped, n_clusters, None, fallback)
        .map(with_names)
        .ok_or_else(|| Error::Fit("mixed model: standard errors unavailable".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ols::fit_ols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("b{i}")).collect()
    }

    fn balanced(rng: &mut ChaCha8Rng, j: usize, n: usize, tau2: f64, sigma2: f64) -> (Vec<f64>, Vec<usize>) {
        let u = Normal::new(0.0, tau2.sqrt()).unwrap();
        let e = Normal::new(0.0, sigma2.sqrt()).unwrap();
        let mut y = Vec::new();
        let mut c = Vec::new();
        for k in 0..j {
            let uj = u.sample(rng);
            for _ in 0..n {
                y.push(uj + e.sample(rng));
                c.push(k);
            }
        }
        (y, c)
    }

    fn anova(y: &[f64], c: &[usize], j: usize, n: usize) -> (f64, f64) {
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let means: Vec<f64> = (0..j).map(|k| (0..y.len()).filter(|&r| c[r] == k).map(|r| y[r]).sum::<f64>() / n as f64).collect();
        let ssb: f64 = means.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
        let ssw: f64 = (0..y.len()).map(|r| (y[r] - means[c[r]]).powi(2)).sum();
        let msb = ssb / (j - 1) as f64;
        let msw = ssw / (y.len() - j) as f64;
        (((msb - msw) / n as f64).max(0.0), msw)
    }

    #[test]
    fn reml_matches_anova_on_balanced_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let (y, c) = balanced(&mut rng, 30, 10, 1.0, 4.0);
            let fit = fit_lmm(&y, &ones(y.len()), &names(1), &c, 30, None, LmmOptions::default()).unwrap();
            let (tau2, sigma2) = anova(&y, &c, 30, 10);
            assert!((fit.tau2_intercept - tau2).abs() < 1e-6, "{} vs {}", fit.tau2_intercept, tau2);
            assert!((fit.sigma2 - sigma2).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_variance_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let c: Vec<usize> = (0..n).map(|i| i % 20).collect();
        let x = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.sample(StandardNormal) });
        // Cluster-level noise removed: every cluster has exactly the same mean residual.
        let y: Vec<f64> = (0..n).map(|r| 1.0 + 2.0 * x[(r, 1)] + if (r / 20) % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let fit = fit_lmm(&y, &x, &names(2), &c, 20, None, LmmOptions::default()).unwrap();
        let ols = fit_ols(&y, &x, &names(2)).unwrap();
        assert!(fit.tau2_intercept < 1e-6);
        for (a, b) in fit.beta.iter().zip(&ols.coefficients) {
            assert!((a - b).abs() < 1e-4);
        }
        let cl: Vec<Option<usize>> = c.iter().map(|&j| Some(j)).collect();
        assert_eq!(
            fit.predict(&x, &cl, PredictionRule::Multilevel).unwrap(),
            fit.predict(&x, &cl, PredictionRule::Prior).unwrap()
        );
    }

    #[test]
    fn blup_is_shrunken_cluster_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = [3usize, 5, 8, 2, 6, 4, 7, 5];
        let mut y = Vec::new();
        let mut c = Vec::new();
        for (j, &n) in sizes.iter().enumerate() {
            let u: f64 = rng.sample::<f64, _>(StandardNormal) * 1.5;
            for _ in 0..n {
                y.push(3.0 + u + rng.sample::<f64, _>(StandardNormal));
                c.push(j);
            }
        }
        let fit = fit_lmm(&y, &ones(y.len()), &names(1), &c, sizes.len(), None, LmmOptions::default()).unwrap();
        assert!(fit.tau2_intercept > 0.0);
        for (j, &n) in sizes.iter().enumerate() {
            let mean = (0..y.len()).filter(|&r| c[r] == j).map(|r| y[r]).sum::<f64>() / n as f64;
            let resid = mean - fit.beta[0];
            let lambda = fit.tau2_intercept / (fit.tau2_intercept + fit.sigma2 / n as f64);
            assert!((fit.blups[j][0] - lambda * resid).abs() < 1e-10);
            assert!(fit.blups[j][0].abs() <= resid.abs());
        }
    }

    #[test]
    fn slope_model_recovers_components_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (j, n) = (150, 25);
        let mut rows = Vec::new();
        for k in 0..j {
            let u0: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let u1: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            for _ in 0..n {
                let x: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                rows.push((k, x, 1.0 + u0 + (2.0 + u1) * x + e));
            }
        }
        let x = DMatrix::from_fn(rows.len(), 2, |r, k| if k == 0 { 1.0 } else { rows[r].1 });
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let c: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let fit = fit_lmm(&y, &x, &names(2), &c, j, Some(1), LmmOptions::default()).unwrap();
        assert!(!fit.fallback_applied);
        assert!(fit.converged);
        assert!((fit.tau2_intercept - 0.25).abs() < 0.1);
        assert!((fit.tau2_slope.unwrap() - 0.25).abs() < 0.1);
        assert!((fit.sigma2 - 1.0).abs() < 0.1);
        assert!((fit.beta[1] - 2.0).abs() < 0.2);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let (_, g) = RemlProblem::new(&y, &x, &c, Some(1))
            .unwrap()
            .deviance_and_gradient(&[
                (fit.tau2_intercept / fit.sigma2).sqrt(),
                fit.tau_intercept_slope.unwrap() / (fit.tau2_intercept * fit.sigma2).sqrt(),
                0.0,
            ])
            .unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let j = 12;
            let mut rows = Vec::new();
            for k in 0..j {
                let n = rng.random_range(3..9);
                let u: f64 = rng.sample(StandardNormal);
                for _ in 0..n {
                    let x: f64 = rng.sample(StandardNormal);
                    rows.push((k, x, u + x + rng.sample::<f64, _>(StandardNormal)));
                }
            }
            let x = DMatrix::from_fn(rows.len(), 2, |r, k| if k == 0 { 1.0 } else { rows[r].1 });
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let c: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let slope = (trial % 2 == 0).then_some(1);
            let prob = RemlProblem::new(&y, &x, &c, slope).unwrap();
            let theta: Vec<f64> = if slope.is_some() {
                vec![rng.random_range(0.2..1.5), rng.random_range(-0.5..0.5), rng.random_range(0.2..1.0)]
            } else {
                vec![rng.random_range(0.2..1.5)]
            };
            let (_, g) = prob.deviance_and_gradient(&theta).unwrap();
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (prob.deviance_and_gradient(&tp).unwrap().0 - prob.deviance_and_gradient(&tm).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn errors_and_fallback() {
        let y = [1.0, 2.0, 3.0];
        assert!(fit_lmm(&y, &ones(3), &names(1), &[0, 0, 0], 1, None, LmmOptions::default()).is_err());
        // One iteration is never enough for the slope model.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 120;
        let c: Vec<usize> = (0..n).map(|i| i % 12).collect();
        let x = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y: Vec<f64> = (0..n).map(|r| x[(r, 1)] + c[r] as f64 * 0.3 + rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = fit_lmm(&y, &x, &names(2), &c, 12, Some(1), LmmOptions { max_iter: 1, grad_tol: 1e-12 }).unwrap();
        assert!(fit.fallback_applied);
        assert!(fit.tau2_slope.is_none());
    }
}
