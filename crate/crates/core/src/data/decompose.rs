//! Within/between split of child-level numeric variables.
//!
//! A child value `a_ij` becomes a cluster-demeaned child value `a_ij - mean_j`
//! plus a parent-level column `<name>__cmean` holding `mean_j`.

use super::dataset::MultilevelDataset;
use super::table::Column;
use crate::error::{Error, Result};

pub const MEAN_SUFFIX: &str = "__cmean";

pub fn mean_column_name(column: &str) -> String {
    format!("{column}{MEAN_SUFFIX}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedDataset {
    dataset: MultilevelDataset,
    columns: Vec<String>,
}

impl DecomposedDataset {
    /// Wraps a dataset that already carries demeaned columns, pairing every
    /// parent `<col>__cmean` column with child column `<col>`.
    pub fn from_dataset(dataset: MultilevelDataset) -> Result<Self> {
        let mut columns = Vec::new();
        for name in dataset.parent_column_names() {
            if let Some(base) = name.strip_suffix(MEAN_SUFFIX) {
                match dataset.child_column(base) {
                    Some(c) if c.as_numeric().is_some() => columns.push(base.to_string()),
                    _ => {
                        return Err(Error::invalid(format!(
                            "mean column `{name}` has no numeric child column `{base}`"
                        )))
                    }
                }
            }
        }
        Ok(Self { dataset, columns })
    }

    pub fn dataset(&self) -> &MultilevelDataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> MultilevelDataset {
        self.dataset
    }

    /// The decomposed child columns.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }
}

pub fn decompose(d: &MultilevelDataset, columns: &[&str]) -> Result<DecomposedDataset> {
    if d.orphan_count() > 0 {
        return Err(Error::invalid("cannot decompose a dataset with orphan rows"));
    }
    if let Some(pos) = d.cluster_sizes().iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "cluster `{}` has no members",
            d.parent().keys[pos]
        )));
    }
    let mut out = d.clone();
    for &name in columns {
        let values = d
            .child_column(name)
            .and_then(Column::as_numeric)
            .ok_or_else(|| Error::invalid(format!("`{name}` is not a numeric child column")))?;
        let means = d.cluster_means(name)?;
        let demeaned: Vec<f64> = values
            .iter()
            .zip(d.child_clusters())
            .map(|(&x, c)| x - means[c.unwrap()])
            .collect();
        out = out.with_child_column(Column::numeric(name, demeaned))?;
        out = out.with_parent_column(Column::numeric(mean_column_name(name), means))?;
    }
    Ok(DecomposedDataset {
        dataset: out,
        columns: columns.iter().map(|s| s.to_string()).collect(),
    })
}

pub fn recompose(d: &DecomposedDataset) -> Result<MultilevelDataset> {
    let ds = &d.dataset;
    let mut out = ds.clone();
    let mut drop = Vec::with_capacity(d.columns.len());
    for name in &d.columns {
        let mean_name = mean_column_name(name);
        let means = ds
            .parent_column(&mean_name)
            .and_then(Column::as_numeric)
            .ok_or_else(|| Error::invalid(format!("missing pair column `{mean_name}`")))?;
        let demeaned = ds
            .child_column(name)
            .and_then(Column::as_numeric)
            .ok_or_else(|| Error::invalid(format!("missing demeaned column `{name}`")))?;
        let restored: Vec<f64> = demeaned
            .iter()
            .zip(ds.child_clusters())
            .map(|(&x, c)| {
                c.map(|p| x + means[p])
                    .ok_or_else(|| Error::invalid("orphan row in decomposed dataset"))
            })
            .collect::<Result<_>>()?;
        out = out.with_child_column(Column::numeric(name.as_str(), restored))?;
        drop.push(mean_name);
    }
    let drop: Vec<&str> = drop.iter().map(String::as_str).collect();
    out.without_columns(&drop)
}
