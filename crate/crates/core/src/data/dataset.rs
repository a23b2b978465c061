use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, ColumnSpec, MultilevelSchema, TableSpec};
use super::table::{Column, ColumnData, Table};
use crate::error::{Error, Result};

/// Referential-integrity policy applied when a dataset is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    /// Orphan foreign keys are an error.
    #[default]
    Strict,
    /// Orphan foreign keys are kept and counted.
    Audit,
}

/// Immutable parent/child dataset in canonical row order: parents sorted by
/// key, children sorted by (cluster id, key).
#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelDataset {
    schema: MultilevelSchema,
    parent: Table,
    child: Table,
    foreign_keys: Vec<String>,
    child_cluster: Vec<Option<usize>>,
}

fn conform_columns(spec: &mut TableSpec, table: &mut Table) -> Result<()> {
    let n = table.keys.len();
    if table.columns.len() != spec.columns.len() {
        for col in &table.columns {
            if spec.column(col.name()).is_none() {
                return Err(Error::UnknownColumn {
                    table: spec.name.clone(),
                    column: col.name().to_string(),
                });
            }
        }
    }
    let mut ordered = Vec::with_capacity(spec.columns.len());
    let mut pool: Vec<Option<Column>> = std::mem::take(&mut table.columns)
        .into_iter()
        .map(Some)
        .collect();
    for col_spec in spec.columns.iter_mut() {
        let idx = pool
            .iter()
            .position(|c| c.as_ref().is_some_and(|c| c.name() == col_spec.name))
            .ok_or_else(|| Error::UnknownColumn {
                table: spec.name.clone(),
                column: col_spec.name.clone(),
            })?;
        let mut col = pool[idx].take().unwrap();
        if col.kind() != col_spec.kind {
            return Err(Error::Schema(format!(
                "column `{}` of `{}` is declared {:?} but holds {:?} data",
                col_spec.name,
                spec.name,
                col_spec.kind,
                col.kind()
            )));
        }
        if col.len() != n {
            return Err(Error::invalid(format!(
                "column `{}` of `{}` has {} values for {} rows",
                col_spec.name,
                spec.name,
                col.len(),
                n
            )));
        }
        match &col.data {
            ColumnData::Numeric(v) => {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::MissingValue {
                        table: spec.name.clone(),
                        row,
                        column: col_spec.name.clone(),
                    });
                }
            }
            ColumnData::Categorical(codes) => {
                let k = col.categories().len();
                if let Some(&bad) = codes.iter().find(|&&c| c as usize >= k) {
                    return Err(Error::invalid(format!(
                        "column `{}`: category code {bad} out of range",
                        col_spec.name
                    )));
                }
            }
        }
        col.spec.role = col_spec.role;
        col_spec.categories = col.spec.categories.clone();
        ordered.push(col);
    }
    if let Some(extra) = pool.into_iter().flatten().next() {
        return Err(Error::UnknownColumn {
            table: spec.name.clone(),
            column: extra.name().to_string(),
        });
    }
    table.columns = ordered;
    table.name = spec.name.clone();
    let mut seen = HashSet::with_capacity(n);
    for key in &table.keys {
        if !seen.insert(key.as_str()) {
            return Err(Error::DuplicateKey {
                table: spec.name.clone(),
                key: key.clone(),
            });
        }
    }
    Ok(())
}

impl MultilevelDataset {
    /// Validates and canonicalizes a dataset. Column order follows the schema;
    /// categorical category lists come from the columns.
    pub fn new(
        mut schema: MultilevelSchema,
        mut parent: Table,
        mut child: Table,
        foreign_keys: Vec<String>,
        mode: LoadMode,
    ) -> Result<Self> {
        schema.validate()?;
        if foreign_keys.len() != child.keys.len() {
            return Err(Error::invalid("foreign key count differs from child row count"));
        }
        conform_columns(&mut schema.parent, &mut parent)?;
        conform_columns(&mut schema.child, &mut child)?;

        let mut porder: Vec<usize> = (0..parent.n_rows()).collect();
        porder.sort_by(|&a, &b| parent.keys[a].cmp(&parent.keys[b]));
        let parent = parent.select(&porder);

        let mut corder: Vec<usize> = (0..child.n_rows()).collect();
        corder.sort_by(|&a, &b| {
            (&foreign_keys[a], &child.keys[a]).cmp(&(&foreign_keys[b], &child.keys[b]))
        });
        let child = child.select(&corder);
        let foreign_keys: Vec<String> = corder.iter().map(|&r| foreign_keys[r].clone()).collect();

        let index: HashMap<&str, usize> = parent
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        let mut child_cluster = Vec::with_capacity(foreign_keys.len());
        for (row, fk) in foreign_keys.iter().enumerate() {
            match index.get(fk.as_str()) {
                Some(&p) => child_cluster.push(Some(p)),
                None if mode == LoadMode::Audit => child_cluster.push(None),
                None => {
                    return Err(Error::OrphanKey {
                        table: schema.child.name.clone(),
                        row,
                        key: fk.clone(),
                    })
                }
            }
        }
        Ok(Self {
            schema,
            parent,
            child,
            foreign_keys,
            child_cluster,
        })
    }

    /// Builds a dataset whose schema is inferred from the tables themselves.
    pub fn from_tables(
        parent: Table,
        parent_key: &str,
        child: Table,
        child_key: &str,
        foreign_key: &str,
        foreign_keys: Vec<String>,
    ) -> Result<Self> {
        let spec_of = |t: &Table| -> Vec<ColumnSpec> { t.columns.iter().map(|c| c.spec.clone()).collect() };
        let schema = MultilevelSchema::new(
            TableSpec {
                name: parent.name.clone(),
                primary_key: parent_key.to_string(),
                foreign_key: None,
                columns: spec_of(&parent),
            },
            TableSpec {
                name: child.name.clone(),
                primary_key: child_key.to_string(),
                foreign_key: Some(foreign_key.to_string()),
                columns: spec_of(&child),
            },
        )?;
        Self::new(schema, parent, child, foreign_keys, LoadMode::Strict)
    }

    pub fn schema(&self) -> &MultilevelSchema {
        &self.schema
    }

    pub fn parent(&self) -> &Table {
        &self.parent
    }

    pub fn child(&self) -> &Table {
        &self.child
    }

    pub fn foreign_keys(&self) -> &[String] {
        &self.foreign_keys
    }

    /// Parent row index of every child row (`None` for orphans in audit mode).
    pub fn child_clusters(&self) -> &[Option<usize>] {
        &self.child_cluster
    }

    /// Number of clusters (parent rows), J.
    pub fn n_clusters(&self) -> usize {
        self.parent.n_rows()
    }

    /// Number of child rows, N.
    pub fn n_children(&self) -> usize {
        self.child.n_rows()
    }

    pub fn orphan_count(&self) -> usize {
        self.child_cluster.iter().filter(|c| c.is_none()).count()
    }

    /// n_j for each parent row, in parent order.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters()];
        for &p in self.child_cluster.iter().flatten() {
            sizes[p] += 1;
        }
        sizes
    }

    pub fn cluster_size_map(&self) -> BTreeMap<String, usize> {
        self.parent
            .keys
            .iter()
            .cloned()
            .zip(self.cluster_sizes())
            .collect()
    }

    /// Child row indices of each cluster, in parent order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (row, c) in self.child_cluster.iter().enumerate() {
            if let Some(p) = c {
                out[*p].push(row);
            }
        }
        out
    }

    pub fn parent_column(&self, name: &str) -> Option<&Column> {
        self.parent.column(name)
    }

    pub fn child_column(&self, name: &str) -> Option<&Column> {
        self.child.column(name)
    }

    /// Child rows that resolve to a parent, with the parent column repeated onto them.
    pub fn parent_column_on_children(&self, name: &str) -> Result<(Vec<usize>, Column)> {
        let col = self.parent_column(name).ok_or_else(|| Error::UnknownColumn {
            table: self.parent.name.clone(),
            column: name.to_string(),
        })?;
        let (rows, parents): (Vec<usize>, Vec<usize>) = self
            .child_cluster
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|p| (r, p)))
            .unzip();
        Ok((rows, col.select(&parents)))
    }

    /// Cluster means of a numeric child column for every parent row.
    /// Clusters without children get `NaN`.
    pub fn cluster_means(&self, name: &str) -> Result<Vec<f64>> {
        let values = self
            .child_column(name)
            .and_then(Column::as_numeric)
            .ok_or_else(|| Error::invalid(format!("`{name}` is not a numeric child column")))?;
        let mut sums = vec![0.0; self.n_clusters()];
        let mut counts = vec![0usize; self.n_clusters()];
        for (row, c) in self.child_cluster.iter().enumerate() {
            if let Some(p) = c {
                sums[*p] += values[row];
                counts[*p] += 1;
            }
        }
        Ok(sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect())
    }

    /// Names of the child attribute columns (including outcomes).
    pub fn child_column_names(&self) -> Vec<String> {
        self.child.columns.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn parent_column_names(&self) -> Vec<String> {
        self.parent.columns.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn column_kind(&self, name: &str) -> Option<ColumnKind> {
        self.child_column(name)
            .or_else(|| self.parent_column(name))
            .map(Column::kind)
    }

    /// Replaces (or appends) a child column, returning a new dataset.
    pub fn with_child_column(&self, column: Column) -> Result<Self> {
        let mut schema = self.schema.clone();
        let mut child = self.child.clone();
        match child.position(column.name()) {
            Some(i) => {
                schema.child.columns[i] = column.spec.clone().with_role(schema.child.columns[i].role);
                child.columns[i] = column;
            }
            None => {
                schema.child.columns.push(column.spec.clone());
                child.columns.push(column);
            }
        }
        Self::new(
            schema,
            self.parent.clone(),
            child,
            self.foreign_keys.clone(),
            self.mode(),
        )
    }

    /// Replaces (or appends) a parent column, returning a new dataset.
    pub fn with_parent_column(&self, column: Column) -> Result<Self> {
        let mut schema = self.schema.clone();
        let mut parent = self.parent.clone();
        match parent.position(column.name()) {
            Some(i) => {
                schema.parent.columns[i] = column.spec.clone().with_role(schema.parent.columns[i].role);
                parent.columns[i] = column;
            }
            None => {
                schema.parent.columns.push(column.spec.clone());
                parent.columns.push(column);
            }
        }
        Self::new(
            schema,
            parent,
            self.child.clone(),
            self.foreign_keys.clone(),
            self.mode(),
        )
    }

    /// Drops the named columns from either table.
    pub fn without_columns(&self, names: &[&str]) -> Result<Self> {
        let mut schema = self.schema.clone();
        let mut parent = self.parent.clone();
        let mut child = self.child.clone();
        schema.parent.columns.retain(|c| !names.contains(&c.name.as_str()));
        schema.child.columns.retain(|c| !names.contains(&c.name.as_str()));
        parent.columns.retain(|c| !names.contains(&c.name()));
        child.columns.retain(|c| !names.contains(&c.name()));
        Self::new(schema, parent, child, self.foreign_keys.clone(), self.mode())
    }

    fn mode(&self) -> LoadMode {
        if self.orphan_count() > 0 {
            LoadMode::Audit
        } else {
            LoadMode::Strict
        }
    }

    /// Keeps only the given parent rows (and their children), in the given order
    /// of preference; canonical ordering is restored afterwards.
    pub fn select_clusters(&self, parents: &[usize]) -> Result<Self> {
        let keep: HashSet<usize> = parents.iter().copied().collect();
        let child_rows: Vec<usize> = self
            .child_cluster
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.filter(|p| keep.contains(p)).map(|_| r))
            .collect();
        Self::new(
            self.schema.clone(),
            self.parent.select(parents),
            self.child.select(&child_rows),
            child_rows.iter().map(|&r| self.foreign_keys[r].clone()).collect(),
            LoadMode::Strict,
        )
    }
}
