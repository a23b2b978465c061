//! Numeric design matrices built from a multilevel dataset.

use nalgebra::DMatrix;

use crate::data::{mean_column_name, MultilevelDataset};
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFrame {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    /// Parent row index of each child row.
    pub cluster: Vec<usize>,
    pub n_clusters: usize,
}

fn numeric_child<'a>(d: &'a MultilevelDataset, name: &str) -> Result<&'a [f64]> {
    let col = d.child_column(name).ok_or_else(|| Error::UnknownColumn {
        table: d.child().name.clone(),
        column: name.to_string(),
    })?;
    col.as_numeric()
        .ok_or_else(|| Error::invalid(format!("`{name}` must be numeric")))
}

fn numeric_parent<'a>(d: &'a MultilevelDataset, name: &str) -> Result<&'a [f64]> {
    let col = d.parent_column(name).ok_or_else(|| Error::UnknownColumn {
        table: d.parent().name.clone(),
        column: name.to_string(),
    })?;
    col.as_numeric()
        .ok_or_else(|| Error::invalid(format!("`{name}` must be numeric")))
}

impl ModelFrame {
    /// Intercept, child covariates, parent covariates and, with `group_means`,
    /// the cluster mean of every child covariate (named by `mean_column_name`).
    pub fn build(
        d: &MultilevelDataset,
        outcome: &str,
        child: &[String],
        parent: &[String],
        group_means: bool,
    ) -> Result<Self> {
        if d.orphan_count() > 0 {
            return Err(Error::invalid("model frames need every child linked to a parent"));
        }
        let cluster: Vec<usize> = d.child_clusters().iter().map(|c| c.unwrap()).collect();
        let n = cluster.len();
        let y = numeric_child(d, outcome)?.to_vec();
        let mut names = vec![INTERCEPT.to_string()];
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for c in child {
            names.push(c.clone());
            cols.push(numeric_child(d, c)?.to_vec());
        }
        for p in parent {
            let v = numeric_parent(d, p)?;
            names.push(p.clone());
            cols.push(cluster.iter().map(|&j| v[j]).collect());
        }
        if group_means {
            for c in child {
                let means = d.cluster_means(c)?;
                names.push(mean_column_name(c));
                cols.push(cluster.iter().map(|&j| means[j]).collect());
            }
        }
        Ok(Self {
            y,
            x: DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]),
            names,
            cluster,
            n_clusters: d.n_clusters(),
        })
    }

    /// Appends the product of a child and a parent covariate, named `child:parent`.
    pub fn add_interaction(&mut self, d: &MultilevelDataset, child: &str, parent: &str) -> Result<()> {
        let x = numeric_child(d, child)?;
        let w = numeric_parent(d, parent)?;
        let col: Vec<f64> = self.cluster.iter().enumerate().map(|(r, &j)| x[r] * w[j]).collect();
        self.x = self.x.clone().insert_column(self.x.ncols(), 0.0);
        let last = self.x.ncols() - 1;
        self.x.set_column(last, &nalgebra::DVector::from_vec(col));
        self.names.push(format!("{child}:{parent}"));
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x: self.x.select_rows(rows),
            names: self.names.clone(),
            cluster: rows.iter().map(|&r| self.cluster[r]).collect(),
            n_clusters: self.n_clusters,
        }
    }
}
