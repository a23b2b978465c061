//! Least squares by modified Gram-Schmidt with re-orthogonalization, and
//! the cluster fixed-effects variant via within-cluster projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::wald::WaldInterval;
use crate::error::{Error, Result};

/// Columns whose residual norm after projection falls below this fraction of
/// their reference norm are treated as aliased.
pub const ALIAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma2: f64,
    pub df_resid: usize,
    /// Design positions of the kept columns.
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    #[serde(skip)]
    pub cov: DMatrix<f64>,
}

impl LinearModelFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[i], self.se[i]))
    }

    pub fn wald_interval(&self, name: &str, level: f64) -> Result<WaldInterval> {
        let (est, se) = self
            .coefficient(name)
            .ok_or_else(|| Error::invalid(format!("no coefficient `{name}` in fit")))?;
        WaldInterval::new(est, se, level)
    }

    /// Linear predictor on a design with the same column layout as the fit.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| self.kept.iter().zip(&self.coefficients).map(|(&c, b)| x[(r, c)] * b).sum())
            .collect()
    }

    pub fn residuals(&self, y: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
        self.predict(x).iter().zip(y).map(|(p, v)| v - p).collect()
    }
}

struct Decomposition {
    q: Vec<DVector<f64>>,
    r: DMatrix<f64>,
    kept: Vec<usize>,
}

fn gram_schmidt(x: &DMatrix<f64>, reference: &[f64]) -> Decomposition {
    let p = x.ncols();
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for k in 0..p {
        let mut v = x.column(k).into_owned();
        let mut coef = vec![0.0; q.len()];
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = qi.dot(&v);
                v.axpy(-c, qi, 1.0);
                coef[i] += c;
            }
        }
        let norm = v.norm();
        if norm > ALIAS_TOL * reference[k] && norm > 0.0 {
            coef.push(norm);
            r_cols.push(coef);
            q.push(v / norm);
            kept.push(k);
        }
    }
    let m = kept.len();
    let mut r = DMatrix::zeros(m, m);
    for (j, col) in r_cols.iter().enumerate() {
        for (i, &c) in col.iter().enumerate() {
            r[(i, j)] = c;
        }
    }
    Decomposition { q, r, kept }
}

fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    r.solve_upper_triangular(b).expect("R has a nonzero diagonal")
}

/// Core solver; `absorbed` counts parameters already projected out of the
/// design (e.g. cluster intercepts) for the residual degrees of freedom.
fn ols_core(y: &[f64], x: &DMatrix<f64>, names: &[String], reference: &[f64], absorbed: usize) -> Result<LinearModelFit> {
    let n = y.len();
    if x.nrows() != n || names.len() != x.ncols() {
        return Err(Error::invalid("OLS: design dimensions do not match"));
    }
    let dec = gram_schmidt(x, reference);
    let rank = dec.kept.len();
    if rank == 0 {
        return Err(Error::Fit("OLS: design has rank 0".into()));
    }
    if n <= rank + absorbed {
        return Err(Error::Fit(format!(
            "OLS: {n} observations for {} parameters",
            rank + absorbed
        )));
    }
    let yv = DVector::from_column_slice(y);
    let qty = DVector::from_iterator(rank, dec.q.iter().map(|qi| qi.dot(&yv)));
    let beta = solve_upper(&dec.r, &qty);
    let mut resid = yv.clone();
    for qi in &dec.q {
        let c = qi.dot(&resid);
        resid.axpy(-c, qi, 1.0);
    }
    let df_resid = n - rank - absorbed;
    let sigma2 = resid.norm_squared() / df_resid as f64;
    let r_inv = dec
        .r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Fit("OLS: triangular factor is singular".into()))?;
    let cov = sigma2 * &r_inv * r_inv.transpose();
    let se = (0..rank).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let dropped = (0..x.ncols())
        .filter(|c| !dec.kept.contains(c))
        .map(|c| names[c].clone())
        .collect();
    Ok(LinearModelFit {
        names: dec.kept.iter().map(|&c| names[c].clone()).collect(),
        coefficients: beta.iter().copied().collect(),
        se,
        sigma2,
        df_resid,
        kept: dec.kept,
        dropped,
        cov,
    })
}

fn column_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm()).collect()
}

/// Ordinary least squares; later columns aliased with earlier ones are dropped.
pub fn fit_ols(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Result<LinearModelFit> {
    ols_core(y, x, names, &column_norms(x), 0)
}

/// Indices of a maximal set of linearly independent columns, in order.
pub fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    gram_schmidt(x, &column_norms(x)).kept
}

/// OLS with cluster-specific intercepts and, optionally, cluster-specific
/// slopes on one design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFeFit {
    /// Common coefficients on the within-cluster design.
    pub common: LinearModelFit,
    pub intercepts: Vec<f64>,
    pub slopes: Option<Vec<f64>>,
    pub slope_column: Option<usize>,
    /// Clusters that had training rows.
    pub seen: Vec<bool>,
}

impl OlsFeFit {
    pub fn slope_applied(&self) -> bool {
        self.slopes.is_some()
    }

    pub fn predict(&self, x: &DMatrix<f64>, cluster: &[Option<usize>]) -> Result<Vec<f64>> {
        let base = self.common.predict(x);
        base.into_iter()
            .enumerate()
            .map(|(r, b)| {
                let j = cluster[r]
                    .filter(|&j| j < self.seen.len() && self.seen[j])
                    .ok_or_else(|| Error::invalid(format!("OLS-FE: row {r} belongs to a cluster without a fixed effect")))?;
                let slope = match (&self.slopes, self.slope_column) {
                    (Some(g), Some(c)) => g[j] * x[(r, c)],
                    _ => 0.0,
                };
                Ok(b + self.intercepts[j] + slope)
            })
            .collect()
    }
}

struct ClusterBasis {
    rows: Vec<usize>,
    s_mean: f64,
    s_ss: f64,
}

impl ClusterBasis {
    /// Removes the projection onto span{1, s} (or span{1}) within the cluster.
    fn project_out(&self, v: &mut [f64], s: Option<&[f64]>) {
        let n = self.rows.len() as f64;
        let mean = self.rows.iter().map(|&r| v[r]).sum::<f64>() / n;
        for &r in &self.rows {
            v[r] -= mean;
        }
        if let Some(s) = s {
            let b = self.rows.iter().map(|&r| (s[r] - self.s_mean) * v[r]).sum::<f64>() / self.s_ss;
            for &r in &self.rows {
                v[r] -= b * (s[r] - self.s_mean);
            }
        }
    }
}

/// Cluster fixed effects by within-cluster projection. `slope` names a design
/// column that gets cluster-specific slopes when every cluster has at least
/// two distinct values of it; otherwise only intercepts are used.
pub fn fit_ols_fe(
    y: &[f64],
    x: &DMatrix<f64>,
    names: &[String],
    cluster: &[usize],
    n_clusters: usize,
    slope: Option<usize>,
) -> Result<OlsFeFit> {
    let n = y.len();
    if cluster.len() != n || x.nrows() != n {
        return Err(Error::invalid("OLS-FE: length mismatch"));
    }
    let mut members = vec![Vec::new(); n_clusters];
    for (r, &j) in cluster.iter().enumerate() {
        members[j].push(r);
    }
    let seen: Vec<bool> = members.iter().map(|m| !m.is_empty()).collect();
    let s_col: Option<Vec<f64>> = slope.map(|c| x.column(c).iter().copied().collect());
    let varies = |s: &[f64]| {
        members
            .iter()
            .filter(|m| !m.is_empty())
            .all(|m| m.iter().any(|&r| s[r] != s[m[0]]))
    };
    let s_col = s_col.filter(|s| varies(s));
    let bases: Vec<ClusterBasis> = members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let (s_mean, s_ss) = match &s_col {
                Some(s) => {
                    let mean = m.iter().map(|&r| s[r]).sum::<f64>() / m.len() as f64;
                    (mean, m.iter().map(|&r| (s[r] - mean).powi(2)).sum())
                }
                None => (0.0, 0.0),
            };
            ClusterBasis { rows: m.clone(), s_mean, s_ss }
        })
        .collect();
    let s_ref = s_col.as_deref();
    let within = |v: &mut Vec<f64>| {
        for b in &bases {
            b.project_out(v, s_ref);
        }
    };
    let mut yw = y.to_vec();
    within(&mut yw);
    let mut xw = x.clone();
    for c in 0..x.ncols() {
        let mut col: Vec<f64> = x.column(c).iter().copied().collect();
        within(&mut col);
        xw.set_column(c, &DVector::from_vec(col));
    }
    let per_cluster = if s_col.is_some() { 2 } else { 1 };
    let absorbed = bases.len() * per_cluster;
    let reference = column_norms(x);
    let common = if xw.ncols() == 0 || gram_schmidt(&xw, &reference).kept.is_empty() {
        // Everything is absorbed by the cluster effects.
        let df = n.checked_sub(absorbed).filter(|&d| d > 0).ok_or_else(|| {
            Error::Fit("OLS-FE: no residual degrees of freedom".into())
        })?;
        LinearModelFit {
            names: Vec::new(),
            coefficients: Vec::new(),
            se: Vec::new(),
            sigma2: yw.iter().map(|v| v * v).sum::<f64>() / df as f64,
            df_resid: df,
            kept: Vec::new(),
            dropped: names.to_vec(),
            cov: DMatrix::zeros(0, 0),
        }
    } else {
        ols_core(&yw, &xw, names, &reference, absorbed)?
    };
    let e = common.residuals(y, x);
    let mut intercepts = vec![0.0; n_clusters];
    let mut slopes = s_col.as_ref().map(|_| vec![0.0; n_clusters]);
    for (j, m) in members.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
        let e_mean = m.iter().map(|&r| e[r]).sum::<f64>() / m.len() as f64;
        match (&s_col, slopes.as_mut()) {
            (Some(s), Some(g)) => {
                let s_mean = m.iter().map(|&r| s[r]).sum::<f64>() / m.len() as f64;
                let sxx: f64 = m.iter().map(|&r| (s[r] - s_mean).powi(2)).sum();
                let sxy: f64 = m.iter().map(|&r| (s[r] - s_mean) * (e[r] - e_mean)).sum();
                g[j] = sxy / sxx;
                intercepts[j] = e_mean - g[j] * s_mean;
            }
            _ => intercepts[j] = e_mean,
        }
    }
    Ok(OlsFeFit {
        common,
        intercepts,
        slopes,
        slope_column: s_col.as_ref().and(slope),
        seen,
    })
}
