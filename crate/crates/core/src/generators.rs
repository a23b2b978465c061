//! Parametric two-level data-generating processes and outcome regeneration.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnRole, LoadMode, MultilevelDataset, Table};
use crate::error::{Error, Result};
use crate::frame::ModelFrame;
use crate::seed::{derive_seed, stream};
use crate::stats::{fit_lmm, LmmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum SizeLaw {
    Fixed { n: usize },
    /// Discrete uniform on `min..=max`.
    Uniform { min: usize, max: usize },
}

impl SizeLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            SizeLaw::Fixed { n } if n >= 1 => Ok(()),
            SizeLaw::Uniform { min, max } if min >= 1 && min <= max => Ok(()),
            _ => Err(Error::invalid("cluster sizes must be at least 1")),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            SizeLaw::Fixed { n } => n,
            SizeLaw::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

/// Table and key names of generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableNames {
    pub parent: String,
    pub parent_key: String,
    pub child: String,
    pub child_key: String,
    pub foreign_key: String,
}

impl Default for TableNames {
    fn default() -> Self {
        Self {
            parent: "school".into(),
            parent_key: "school_id".into(),
            child: "student".into(),
            child_key: "student_id".into(),
            foreign_key: "school_id".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildVariable {
    pub name: String,
    #[serde(default)]
    pub mean: f64,
    /// Between-cluster variance.
    pub tau2: f64,
    /// Within-cluster variance.
    pub sigma2: f64,
}

impl ChildVariable {
    pub fn with_icc(name: impl Into<String>, icc: f64, total_variance: f64) -> Self {
        Self {
            name: name.into(),
            mean: 0.0,
            tau2: icc * total_variance,
            sigma2: (1.0 - icc) * total_variance,
        }
    }

    pub fn icc(&self) -> f64 {
        self.tau2 / (self.tau2 + self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentVariable {
    pub name: String,
    #[serde(default)]
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: String,
    pub b: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalGaussianSpec {
    pub clusters: usize,
    pub sizes: SizeLaw,
    #[serde(default)]
    pub child: Vec<ChildVariable>,
    #[serde(default)]
    pub parent: Vec<ParentVariable>,
    /// Correlations among the cluster components of child variables and the
    /// parent variables.
    #[serde(default)]
    pub between: Vec<Correlation>,
    /// Correlations among the within-cluster components of child variables.
    #[serde(default)]
    pub within: Vec<Correlation>,
    #[serde(default)]
    pub outcome: Option<OutcomeModelSpec>,
    #[serde(default)]
    pub names: TableNames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

/// Product of a child and a parent covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub child: String,
    pub parent: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSlope {
    pub column: String,
    pub variance: f64,
    /// Covariance with the random intercept.
    #[serde(default)]
    pub covariance: f64,
}

/// `y = β₀ + Σβ·x + Σβ·w + Σγ·x·w + U_j (+ V_j·x_s) + R_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    #[serde(default = "default_outcome")]
    pub outcome: String,
    pub intercept: f64,
    #[serde(default)]
    pub child: Vec<Coefficient>,
    #[serde(default)]
    pub parent: Vec<Coefficient>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    pub sigma_u2: f64,
    pub sigma_r2: f64,
    #[serde(default)]
    pub random_slope: Option<RandomSlope>,
}

fn default_outcome() -> String {
    "y".into()
}

impl OutcomeModelSpec {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.child
            .iter()
            .chain(&self.parent)
            .find(|c| c.name == name)
            .map(|c| c.value)
    }

    pub fn child_names(&self) -> Vec<String> {
        self.child.iter().map(|c| c.name.clone()).collect()
    }

    pub fn parent_names(&self) -> Vec<String> {
        self.parent.iter().map(|c| c.name.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome spec serializes")
    }

    fn validate(&self) -> Result<()> {
        let values = self
            .child
            .iter()
            .chain(&self.parent)
            .map(|c| c.value)
            .chain(self.interactions.iter().map(|i| i.value))
            .chain([self.intercept]);
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("outcome coefficients must be finite"));
        }
        if !(self.sigma_u2 >= 0.0 && self.sigma_r2 >= 0.0) {
            return Err(Error::invalid("outcome variances must be non-negative"));
        }
        Ok(())
    }

    /// Lower Cholesky factor of the (intercept, slope) covariance.
    fn random_factor(&self) -> Result<[f64; 3]> {
        let a = self.sigma_u2;
        let Some(s) = &self.random_slope else {
            return Ok([a.sqrt(), 0.0, 0.0]);
        };
        let l11 = a.sqrt();
        let l21 = if l11 > 0.0 {
            s.covariance / l11
        } else if s.covariance == 0.0 {
            0.0
        } else {
            return Err(Error::invalid("random-effect covariance is not positive semi-definite"));
        };
        let rest = s.variance - l21 * l21;
        if rest < -1e-12 {
            return Err(Error::invalid("random-effect covariance is not positive semi-definite"));
        }
        Ok([l11, l21, rest.max(0.0).sqrt()])
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Opaque cluster labels that are unique within one call.
pub fn fresh_cluster_ids(count: usize, seed: u64) -> Vec<String> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    for j in 0..count {
        loop {
            let id = format!("k{:012x}", derive_seed(seed, j as u64, attempt, "cluster-id") >> 16);
            if seen.insert(id.clone()) {
                out.push(id);
                break;
            }
            attempt += 1;
        }
    }
    out
}

fn child_ids(cluster_ids: &[String], sizes: &[usize]) -> (Vec<String>, Vec<String>) {
    let mut keys = Vec::new();
    let mut fks = Vec::new();
    for (id, &n) in cluster_ids.iter().zip(sizes) {
        for i in 0..n {
            keys.push(format!("{id}-{i:04}"));
            fks.push(id.clone());
        }
    }
    (keys, fks)
}

fn correlation_matrix(names: &[&str], pairs: &[Correlation], what: &str) -> Result<DMatrix<f64>> {
    let k = names.len();
    let mut r = DMatrix::identity(k, k);
    for c in pairs {
        let pos = |n: &str| {
            names
                .iter()
                .position(|&x| x == n)
                .ok_or_else(|| Error::invalid(format!("{what} correlation names unknown variable `{n}`")))
        };
        let (a, b) = (pos(&c.a)?, pos(&c.b)?);
        if a == b || !(c.r.abs() < 1.0) {
            return Err(Error::invalid(format!("{what} correlation {}~{} must lie in (-1, 1)", c.a, c.b)));
        }
        r[(a, b)] = c.r;
        r[(b, a)] = c.r;
    }
    Ok(r)
}

fn cholesky(r: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if r.nrows() == 0 {
        return Ok(r);
    }
    r.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::invalid(format!("{what} correlation targets are not positive definite")))
}

fn correlated(l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = l.nrows();
    let z: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    (0..k).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect()
}

fn assemble(
    names: &TableNames,
    cluster_ids: Vec<String>,
    sizes: &[usize],
    parent_cols: Vec<Column>,
    child_cols: Vec<Column>,
) -> Result<MultilevelDataset> {
    let (keys, fks) = child_ids(&cluster_ids, sizes);
    MultilevelDataset::from_tables(
        Table::new(names.parent.clone(), cluster_ids, parent_cols),
        &names.parent_key,
        Table::new(names.child.clone(), keys, child_cols),
        &names.child_key,
        &names.foreign_key,
        fks,
    )
}

impl HierarchicalGaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::invalid("at least one cluster is required"));
        }
        self.sizes.validate()?;
        for v in &self.child {
            if !(v.tau2 >= 0.0 && v.sigma2 > 0.0 && v.mean.is_finite()) {
                return Err(Error::invalid(format!("variable `{}` needs τ² ≥ 0 and σ² > 0", v.name)));
            }
        }
        for v in &self.parent {
            if !(v.variance >= 0.0 && v.mean.is_finite()) {
                return Err(Error::invalid(format!("variable `{}` needs a non-negative variance", v.name)));
            }
        }
        if let Some(o) = &self.outcome {
            o.validate()?;
        }
        self.factors().map(|_| ())
    }

    fn factors(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let between: Vec<&str> = self
            .child
            .iter()
            .map(|v| v.name.as_str())
            .chain(self.parent.iter().map(|v| v.name.as_str()))
            .collect();
        let within: Vec<&str> = self.child.iter().map(|v| v.name.as_str()).collect();
        Ok((
            cholesky(correlation_matrix(&between, &self.between, "between")?, "between")?,
            cholesky(correlation_matrix(&within, &self.within, "within")?, "within")?,
        ))
    }
}

/// Draws a dataset from a hierarchical Gaussian specification. Identical
/// `(spec, seed)` pairs give identical datasets.
pub fn generate_hierarchical(spec: &HierarchicalGaussianSpec, seed: u64) -> Result<MultilevelDataset> {
    spec.validate()?;
    let (lb, lw) = spec.factors()?;
    let p = spec.child.len();
    let mut size_rng = stream(seed, 0, 0, "sizes");
    let sizes: Vec<usize> = (0..spec.clusters).map(|_| spec.sizes.draw(&mut size_rng)).collect();

    let mut between_rng = stream(seed, 0, 0, "between");
    let draws: Vec<Vec<f64>> = (0..spec.clusters).map(|_| correlated(&lb, &mut between_rng)).collect();
    let parent_cols: Vec<Column> = spec
        .parent
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let sd = v.variance.sqrt();
            Column::numeric(v.name.clone(), draws.iter().map(|z| v.mean + sd * z[p + k]).collect())
        })
        .collect();

    let mut within_rng = stream(seed, 0, 0, "within");
    let mut child_vals = vec![Vec::new(); p];
    for (j, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            let e = correlated(&lw, &mut within_rng);
            for (k, v) in spec.child.iter().enumerate() {
                child_vals[k].push(v.mean + v.tau2.sqrt() * draws[j][k] + v.sigma2.sqrt() * e[k]);
            }
        }
    }
    let child_cols: Vec<Column> = spec
        .child
        .iter()
        .zip(child_vals)
        .map(|(v, vals)| Column::numeric(v.name.clone(), vals))
        .collect();

    let ids = fresh_cluster_ids(spec.clusters, seed);
    let d = assemble(&spec.names, ids, &sizes, parent_cols, child_cols)?;
    match &spec.outcome {
        Some(o) => regenerate_outcome(&d, o, derive_seed(seed, 0, 0, "outcome")),
        None => Ok(d),
    }
}

/// Replication design with one child and one parent predictor, the parent
/// predictor entering both the intercept and the slope equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfshartousSpec {
    pub clusters: usize,
    pub cluster_size: usize,
    pub gamma00: f64,
    pub gamma01: f64,
    pub gamma10: f64,
    pub gamma11: f64,
    pub tau00: f64,
    pub tau11: f64,
    #[serde(default)]
    pub tau01: f64,
    pub sigma2: f64,
}

impl Default for AfshartousSpec {
    fn default() -> Self {
        Self {
            clusters: 50,
            cluster_size: 25,
            gamma00: 0.0,
            gamma01: 0.5,
            gamma10: 1.0,
            gamma11: 0.5,
            tau00: 0.25,
            tau11: 0.25,
            tau01: 0.0,
            sigma2: 1.0,
        }
    }
}

impl AfshartousSpec {
    pub const CHILD: &'static str = "x";
    pub const PARENT: &'static str = "w";

    pub fn with_clusters(mut self, clusters: usize) -> Self {
        self.clusters = clusters;
        self
    }

    pub fn outcome(&self) -> OutcomeModelSpec {
        OutcomeModelSpec {
            outcome: default_outcome(),
            intercept: self.gamma00,
            child: vec![Coefficient {
                name: Self::CHILD.into(),
                value: self.gamma10,
            }],
            parent: vec![Coefficient {
                name: Self::PARENT.into(),
                value: self.gamma01,
            }],
            interactions: vec![Interaction {
                child: Self::CHILD.into(),
                parent: Self::PARENT.into(),
                value: self.gamma11,
            }],
            sigma_u2: self.tau00,
            sigma_r2: self.sigma2,
            random_slope: Some(RandomSlope {
                column: Self::CHILD.into(),
                variance: self.tau11,
                covariance: self.tau01,
            }),
        }
    }

    pub fn hierarchical(&self) -> HierarchicalGaussianSpec {
        HierarchicalGaussianSpec {
            clusters: self.clusters,
            sizes: SizeLaw::Fixed { n: self.cluster_size },
            child: vec![ChildVariable {
                name: Self::CHILD.into(),
                mean: 0.0,
                tau2: 0.0,
                sigma2: 1.0,
            }],
            parent: vec![ParentVariable {
                name: Self::PARENT.into(),
                mean: 0.0,
                variance: 1.0,
            }],
            between: Vec::new(),
            within: Vec::new(),
            outcome: Some(self.outcome()),
            names: TableNames::default(),
        }
    }
}

pub fn generate_afshartous(spec: &AfshartousSpec, seed: u64) -> Result<MultilevelDataset> {
    generate_hierarchical(&spec.hierarchical(), seed)
}

/// Omitted-variable design: two correlated cluster predictors, one of them
/// unobserved, and a child predictor correlated with the unobserved one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HuangDgpSpec {
    /// Correlation of the two cluster predictors.
    pub rho_w: f64,
    /// Correlation of the child predictor with the omitted cluster predictor.
    pub rho_x: f64,
    pub sizes: SizeLaw,
    pub intercept: f64,
    pub beta_x: f64,
    pub beta_w_obs: f64,
    pub beta_w_omit: f64,
    pub sigma_u2: f64,
    pub sigma_r2: f64,
}

impl Default for HuangDgpSpec {
    fn default() -> Self {
        Self {
            rho_w: -0.25,
            rho_x: 0.25,
            sizes: SizeLaw::Uniform { min: 10, max: 30 },
            intercept: 0.0,
            beta_x: 2.0,
            beta_w_obs: 2.0,
            beta_w_omit: 5.0,
            sigma_u2: 1.0,
            sigma_r2: 9.0,
        }
    }
}

impl HuangDgpSpec {
    pub const X: &'static str = "X";
    pub const W_OBS: &'static str = "W_obs";
    pub const W_OMIT: &'static str = "W_omit";

    pub fn truth(&self) -> OutcomeModelSpec {
        let c = |name: &str, value| Coefficient {
            name: name.into(),
            value,
        };
        OutcomeModelSpec {
            outcome: default_outcome(),
            intercept: self.intercept,
            child: vec![c(Self::X, self.beta_x)],
            parent: vec![c(Self::W_OBS, self.beta_w_obs), c(Self::W_OMIT, self.beta_w_omit)],
            interactions: Vec::new(),
            sigma_u2: self.sigma_u2,
            sigma_r2: self.sigma_r2,
            random_slope: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.sizes.validate()?;
        if !(self.rho_w.abs() < 1.0 && self.rho_x.abs() < 1.0) {
            return Err(Error::invalid("correlations must lie in (-1, 1)"));
        }
        if !(self.sigma_u2 > 0.0 && self.sigma_r2 > 0.0) {
            return Err(Error::invalid("variances must be positive"));
        }
        Ok(())
    }
}

/// Covariates of the omitted-variable design; `W_omit` carries the
/// `omitted` role so fitted models leave it out.
pub fn generate_huang_covariates(spec: &HuangDgpSpec, clusters: usize, seed: u64) -> Result<MultilevelDataset> {
    spec.validate()?;
    if clusters < 2 {
        return Err(Error::invalid("the omitted-variable design needs at least two clusters"));
    }
    let mut size_rng = stream(seed, 0, 0, "sizes");
    let sizes: Vec<usize> = (0..clusters).map(|_| spec.sizes.draw(&mut size_rng)).collect();
    let mut rng = stream(seed, 0, 0, "between");
    let rw = (1.0 - spec.rho_w * spec.rho_w).sqrt();
    let (mut w_obs, mut w_omit) = (Vec::with_capacity(clusters), Vec::with_capacity(clusters));
    for _ in 0..clusters {
        let (a, b) = (normal(&mut rng), normal(&mut rng));
        w_obs.push(a);
        w_omit.push(spec.rho_w * a + rw * b);
    }
    let mut rng = stream(seed, 0, 0, "within");
    let rx = (1.0 - spec.rho_x * spec.rho_x).sqrt();
    let mut x = Vec::new();
    for (j, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            x.push(spec.rho_x * w_omit[j] + rx * normal(&mut rng));
        }
    }
    let mut omit = Column::numeric(HuangDgpSpec::W_OMIT, w_omit);
    omit.spec.role = ColumnRole::Omitted;
    assemble(
        &TableNames::default(),
        fresh_cluster_ids(clusters, seed),
        &sizes,
        vec![Column::numeric(HuangDgpSpec::W_OBS, w_obs), omit],
        vec![Column::numeric(HuangDgpSpec::X, x)],
    )
}

pub fn generate_huang(spec: &HuangDgpSpec, clusters: usize, seed: u64) -> Result<MultilevelDataset> {
    let d = generate_huang_covariates(spec, clusters, seed)?;
    regenerate_outcome(&d, &spec.truth(), derive_seed(seed, 0, 0, "outcome"))
}

/// Names of columns marked as omitted in either table.
pub fn omitted_columns(d: &MultilevelDataset) -> Vec<String> {
    let s = d.schema();
    s.parent
        .columns
        .iter()
        .chain(&s.child.columns)
        .filter(|c| c.role == ColumnRole::Omitted)
        .map(|c| c.name.clone())
        .collect()
}

fn numeric_column<'a>(d: &'a MultilevelDataset, name: &str, parent: bool) -> Result<&'a [f64]> {
    let (col, table) = if parent {
        (d.parent_column(name), &d.parent().name)
    } else {
        (d.child_column(name), &d.child().name)
    };
    col.ok_or_else(|| Error::UnknownColumn {
        table: table.clone(),
        column: name.to_string(),
    })?
    .as_numeric()
    .ok_or_else(|| Error::invalid(format!("covariate `{name}` must be numeric")))
}

/// Replaces (or adds) the outcome with a fresh draw from `spec`. Covariates
/// are left untouched; the seed only drives the random effects and residuals.
pub fn regenerate_outcome(d: &MultilevelDataset, spec: &OutcomeModelSpec, seed: u64) -> Result<MultilevelDataset> {
    spec.validate()?;
    if d.orphan_count() > 0 {
        return Err(Error::invalid("outcome regeneration needs every child linked to a parent"));
    }
    let factor = spec.random_factor()?;
    let cluster: Vec<usize> = d.child_clusters().iter().map(|c| c.unwrap()).collect();
    let mut lin = vec![spec.intercept; cluster.len()];
    for c in &spec.child {
        let v = numeric_column(d, &c.name, false)?;
        lin.iter_mut().zip(v).for_each(|(l, x)| *l += c.value * x);
    }
    for c in &spec.parent {
        let v = numeric_column(d, &c.name, true)?;
        lin.iter_mut().zip(&cluster).for_each(|(l, &j)| *l += c.value * v[j]);
    }
    for i in &spec.interactions {
        let x = numeric_column(d, &i.child, false)?;
        let w = numeric_column(d, &i.parent, true)?;
        for (r, l) in lin.iter_mut().enumerate() {
            *l += i.value * x[r] * w[cluster[r]];
        }
    }
    let slope_x = match &spec.random_slope {
        Some(s) => Some(numeric_column(d, &s.column, false)?),
        None => None,
    };

    let mut u_rng = stream(seed, 0, 0, "random-effects");
    let effects: Vec<(f64, f64)> = (0..d.n_clusters())
        .map(|_| {
            let (z1, z2) = (normal(&mut u_rng), normal(&mut u_rng));
            (factor[0] * z1, factor[1] * z1 + factor[2] * z2)
        })
        .collect();
    let mut r_rng = stream(seed, 0, 0, "residuals");
    let sd_r = spec.sigma_r2.sqrt();
    let y: Vec<f64> = lin
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            let (u0, u1) = effects[cluster[r]];
            l + u0 + slope_x.map_or(0.0, |x| u1 * x[r]) + sd_r * normal(&mut r_rng)
        })
        .collect();
    let mut col = Column::numeric(spec.outcome.clone(), y);
    col.spec.role = ColumnRole::Outcome;
    d.with_child_column(col)
}

/// Shape of the assumed outcome model whose estimates become the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelShape {
    pub outcome: String,
    #[serde(default)]
    pub child: Vec<String>,
    #[serde(default)]
    pub parent: Vec<String>,
    #[serde(default)]
    pub random_slope: Option<String>,
}

/// Fits the assumed mixed model to a reference dataset and packages the
/// estimates (fixed effects and variance components) as an outcome spec.
pub fn learn_true_parameters(reference: &MultilevelDataset, shape: &OutcomeModelShape) -> Result<OutcomeModelSpec> {
    let frame = ModelFrame::build(reference, &shape.outcome, &shape.child, &shape.parent, false)?;
    let slope = match &shape.random_slope {
        Some(s) => Some(
            frame
                .position(s)
                .filter(|&i| i > 0 && i <= shape.child.len())
                .ok_or_else(|| Error::invalid(format!("random slope `{s}` must be a child covariate")))?,
        ),
        None => None,
    };
    let fit = fit_lmm(
        &frame.y,
        &frame.x,
        &frame.names,
        &frame.cluster,
        frame.n_clusters,
        slope,
        LmmOptions::default(),
    )?;
    if !fit.dropped.is_empty() {
        return Err(Error::Fit(format!("aliased covariates: {}", fit.dropped.join(", "))));
    }
    let coef = |name: &String| Coefficient {
        name: name.clone(),
        value: fit.coefficient(name).expect("kept column").0,
    };
    let random_slope = match (&shape.random_slope, fit.tau2_slope) {
        (Some(column), Some(variance)) => Some(RandomSlope {
            column: column.clone(),
            variance,
            covariance: fit.tau_intercept_slope.unwrap_or(0.0),
        }),
        _ => None,
    };
    Ok(OutcomeModelSpec {
        outcome: shape.outcome.clone(),
        intercept: fit.beta[0],
        child: shape.child.iter().map(coef).collect(),
        parent: shape.parent.iter().map(coef).collect(),
        interactions: Vec::new(),
        sigma_u2: fit.tau2_intercept.max(0.0),
        sigma_r2: fit.sigma2,
        random_slope,
    })
}

/// Resamples whole clusters. Every output cluster gets a fresh id, so a
/// source cluster drawn twice appears as two distinct clusters.
pub fn cluster_bootstrap(d: &MultilevelDataset, clusters_out: usize, with_replacement: bool, seed: u64) -> Result<MultilevelDataset> {
    let j = d.n_clusters();
    if clusters_out == 0 {
        return Err(Error::invalid("bootstrap needs at least one output cluster"));
    }
    if !with_replacement && clusters_out > j {
        return Err(Error::invalid(format!(
            "cannot draw {clusters_out} of {j} clusters without replacement"
        )));
    }
    if j == 0 {
        return Err(Error::invalid("bootstrap source has no clusters"));
    }
    let mut rng = stream(seed, 0, 0, "bootstrap");
    let sources: Vec<usize> = if with_replacement {
        (0..clusters_out).map(|_| rng.random_range(0..j)).collect()
    } else {
        rand::seq::index::sample(&mut rng, j, clusters_out).into_vec()
    };
    let members = d.members();
    let ids = fresh_cluster_ids(clusters_out, seed);
    let mut parent = d.parent().select(&sources);
    parent.keys.clone_from(&ids);
    let child_rows: Vec<usize> = sources.iter().flat_map(|&s| members[s].iter().copied()).collect();
    let sizes: Vec<usize> = sources.iter().map(|&s| members[s].len()).collect();
    let mut child = d.child().select(&child_rows);
    let (keys, fks) = child_ids(&ids, &sizes);
    child.keys = keys;
    MultilevelDataset::new(d.schema().clone(), parent, child, fks, LoadMode::Strict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::{cardinality_shape_similarity, estimate_variance_components, referential_integrity};
    use crate::fidelity::metrics::pearson;

    fn icc_spec(icc: f64, clusters: usize) -> HierarchicalGaussianSpec {
        HierarchicalGaussianSpec {
            clusters,
            sizes: SizeLaw::Fixed { n: 25 },
            child: vec![ChildVariable::with_icc("a", icc, 1.0)],
            parent: vec![],
            between: vec![],
            within: vec![],
            outcome: None,
            names: TableNames::default(),
        }
    }

    #[test]
    fn icc_targets_are_met() {
        let zero = generate_hierarchical(&icc_spec(0.0, 200), 1).unwrap();
        assert!(estimate_variance_components(&zero, "a").unwrap().icc <= 0.05);
        for seed in 0..3 {
            let d = generate_hierarchical(&icc_spec(0.2, 200), seed).unwrap();
            let icc = estimate_variance_components(&d, "a").unwrap().icc;
            assert!((icc - 0.2).abs() < 0.05, "{icc}");
        }
    }

    #[test]
    fn pure_function_of_spec_and_seed() {
        let spec = AfshartousSpec::default().with_clusters(10);
        let a = generate_afshartous(&spec, 3).unwrap();
        assert_eq!(a, generate_afshartous(&spec, 3).unwrap());
        let b = generate_afshartous(&spec, 4).unwrap();
        assert_ne!(a.parent().keys, b.parent().keys);
        assert_eq!(cardinality_shape_similarity(&a, &b).unwrap().value, 1.0);
        assert_eq!(a.n_children(), 250);
    }

    #[test]
    fn correlation_targets() {
        let spec = HierarchicalGaussianSpec {
            clusters: 400,
            sizes: SizeLaw::Uniform { min: 5, max: 15 },
            child: vec![ChildVariable::with_icc("a", 0.5, 2.0), ChildVariable::with_icc("b", 0.5, 2.0)],
            parent: vec![ParentVariable {
                name: "w".into(),
                mean: 1.0,
                variance: 4.0,
            }],
            between: vec![Correlation {
                a: "a".into(),
                b: "w".into(),
                r: 0.6,
            }],
            within: vec![Correlation {
                a: "a".into(),
                b: "b".into(),
                r: -0.5,
            }],
            outcome: None,
            names: TableNames::default(),
        };
        let d = generate_hierarchical(&spec, 9).unwrap();
        let means = d.cluster_means("a").unwrap();
        let w = d.parent_column("w").unwrap().as_numeric().unwrap();
        assert!((pearson(&means, w).unwrap() - 0.6).abs() < 0.1);
        let a = d.child_column("a").unwrap().as_numeric().unwrap();
        let b = d.child_column("b").unwrap().as_numeric().unwrap();
        let cl: Vec<usize> = d.child_clusters().iter().map(|c| c.unwrap()).collect();
        let ma = d.cluster_means("a").unwrap();
        let mb = d.cluster_means("b").unwrap();
        let wa: Vec<f64> = a.iter().zip(&cl).map(|(v, &j)| v - ma[j]).collect();
        let wb: Vec<f64> = b.iter().zip(&cl).map(|(v, &j)| v - mb[j]).collect();
        assert!((pearson(&wa, &wb).unwrap() + 0.5).abs() < 0.05);

        let mut bad = spec.clone();
        bad.between.push(Correlation {
            a: "b".into(),
            b: "w".into(),
            r: -0.9,
        });
        bad.between.push(Correlation {
            a: "a".into(),
            b: "b".into(),
            r: 0.9,
        });
        assert!(generate_hierarchical(&bad, 0).is_err());
    }

    #[test]
    fn huang_moments() {
        let spec = HuangDgpSpec::default();
        let d = generate_huang(&spec, 500, 17).unwrap();
        let w_obs = d.parent_column("W_obs").unwrap().as_numeric().unwrap();
        let w_omit = d.parent_column("W_omit").unwrap().as_numeric().unwrap();
        assert!((pearson(w_obs, w_omit).unwrap() + 0.25).abs() < 0.1);
        let (_, on_children) = d.parent_column_on_children("W_omit").unwrap();
        let x = d.child_column("X").unwrap().as_numeric().unwrap();
        assert!((pearson(x, on_children.as_numeric().unwrap()).unwrap() - 0.25).abs() < 0.1);
        let mean_size = d.n_children() as f64 / 500.0;
        assert!((mean_size - 20.0).abs() < 1.0);
        assert_eq!(omitted_columns(&d), vec!["W_omit"]);

        let zero = HuangDgpSpec {
            beta_x: 0.0,
            beta_w_obs: 0.0,
            beta_w_omit: 0.0,
            ..spec
        };
        let z = generate_huang(&zero, 2000, 5).unwrap();
        let y = z.child_column("y").unwrap().as_numeric().unwrap();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        assert!((var - 10.0).abs() < 1.0, "{var}");
    }

    fn simple_truth() -> OutcomeModelSpec {
        OutcomeModelSpec {
            outcome: "y".into(),
            intercept: 1.0,
            child: vec![Coefficient {
                name: "a".into(),
                value: 0.5,
            }],
            parent: vec![Coefficient {
                name: "w".into(),
                value: -2.0,
            }],
            interactions: vec![],
            sigma_u2: 0.5,
            sigma_r2: 1.5,
            random_slope: None,
        }
    }

    fn covariates(clusters: usize, seed: u64) -> MultilevelDataset {
        let mut spec = icc_spec(0.3, clusters);
        spec.sizes = SizeLaw::Uniform { min: 5, max: 20 };
        spec.parent.push(ParentVariable {
            name: "w".into(),
            mean: 0.0,
            variance: 1.0,
        });
        generate_hierarchical(&spec, seed).unwrap()
    }

    #[test]
    fn zero_variance_outcome_is_the_linear_predictor() {
        let d = covariates(20, 1);
        let truth = OutcomeModelSpec {
            sigma_u2: 0.0,
            sigma_r2: 0.0,
            ..simple_truth()
        };
        let out = regenerate_outcome(&d, &truth, 3).unwrap();
        let y = out.child_column("y").unwrap().as_numeric().unwrap();
        let a = d.child_column("a").unwrap().as_numeric().unwrap();
        let w = d.parent_column("w").unwrap().as_numeric().unwrap();
        for (r, c) in d.child_clusters().iter().enumerate() {
            assert_eq!(y[r], 1.0 + 0.5 * a[r] - 2.0 * w[c.unwrap()]);
        }
        let again = regenerate_outcome(&d, &simple_truth(), 4).unwrap();
        assert_eq!(again.without_columns(&["y"]).unwrap(), d);
        assert_eq!(out.schema().child.column("y").unwrap().role, ColumnRole::Outcome);

        let mut missing = simple_truth();
        missing.child[0].name = "nope".into();
        assert!(regenerate_outcome(&d, &missing, 0).is_err());
    }

    #[test]
    fn learned_truth_round_trips() {
        let d = regenerate_outcome(&covariates(150, 2), &simple_truth(), 8).unwrap();
        let shape = OutcomeModelShape {
            outcome: "y".into(),
            child: vec!["a".into()],
            parent: vec!["w".into()],
            random_slope: None,
        };
        let learned = learn_true_parameters(&d, &shape).unwrap();
        assert!(learned.sigma_u2 >= 0.0 && learned.sigma_r2 >= 0.0);
        assert_eq!(OutcomeModelSpec::from_json(&learned.to_json()).unwrap(), learned);

        let big = regenerate_outcome(&covariates(600, 3), &learned, 11).unwrap();
        let frame = ModelFrame::build(&big, "y", &shape.child, &shape.parent, false).unwrap();
        let fit = fit_lmm(&frame.y, &frame.x, &frame.names, &frame.cluster, frame.n_clusters, None, LmmOptions::default()).unwrap();
        for name in ["a", "w"] {
            let (est, se) = fit.coefficient(name).unwrap();
            let truth = learned.coefficient(name).unwrap();
            assert!((est - truth).abs() < 3.0 * se, "{name}: {est} vs {truth} (se {se})");
        }
    }

    #[test]
    fn bootstrap_ids_and_integrity() {
        let d = covariates(12, 4);
        let perm = cluster_bootstrap(&d, 12, false, 1).unwrap();
        let mut a = d.cluster_sizes();
        let mut b = perm.cluster_sizes();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(perm.n_children(), d.n_children());
        assert!(cluster_bootstrap(&d, 13, false, 1).is_err());

        let boot = cluster_bootstrap(&d, 40, true, 2).unwrap();
        assert_eq!(boot.n_clusters(), 40);
        assert_eq!(referential_integrity(&boot).unwrap().value, 1.0);
        let ids: HashSet<&String> = boot.parent().keys.iter().collect();
        assert_eq!(ids.len(), 40);
        assert!(boot.parent().keys.iter().all(|k| !d.parent().keys.contains(k)));
    }

    #[test]
    fn specs_serialize() {
        let spec = AfshartousSpec::default().hierarchical();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<HierarchicalGaussianSpec>(&text).unwrap(), spec);
        let h = HuangDgpSpec::default();
        assert_eq!(serde_json::from_str::<HuangDgpSpec>(&serde_json::to_string(&h).unwrap()).unwrap(), h);
    }
}
