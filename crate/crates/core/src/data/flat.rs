use std::collections::{BTreeMap, HashSet};

use super::dataset::{LoadMode, MultilevelDataset};
use super::schema::MultilevelSchema;
use super::table::{Column, ColumnData, Table};
use crate::error::{Error, Result};

/// Join-as-one representation: one row per child carrying its parent's attributes.
///
/// Nothing forces parent attributes to agree within a cluster; that is checked
/// by [`split_tables`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTable {
    schema: MultilevelSchema,
    child_keys: Vec<String>,
    cluster_ids: Vec<String>,
    child_columns: Vec<Column>,
    parent_columns: Vec<Column>,
}

impl FlatTable {
    pub fn new(
        schema: MultilevelSchema,
        child_keys: Vec<String>,
        cluster_ids: Vec<String>,
        child_columns: Vec<Column>,
        parent_columns: Vec<Column>,
    ) -> Result<Self> {
        let n = child_keys.len();
        if cluster_ids.len() != n || child_columns.iter().chain(&parent_columns).any(|c| c.len() != n) {
            return Err(Error::invalid("flat table columns have unequal lengths"));
        }
        let mut seen = HashSet::with_capacity(n);
        for k in &child_keys {
            if !seen.insert(k.as_str()) {
                return Err(Error::DuplicateKey {
                    table: schema.child.name.clone(),
                    key: k.clone(),
                });
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| (&cluster_ids[a], &child_keys[a]).cmp(&(&cluster_ids[b], &child_keys[b])));
        Ok(Self {
            child_keys: order.iter().map(|&r| child_keys[r].clone()).collect(),
            cluster_ids: order.iter().map(|&r| cluster_ids[r].clone()).collect(),
            child_columns: child_columns.iter().map(|c| c.select(&order)).collect(),
            parent_columns: parent_columns.iter().map(|c| c.select(&order)).collect(),
            schema,
        })
    }

    pub fn schema(&self) -> &MultilevelSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.child_keys.len()
    }

    pub fn child_keys(&self) -> &[String] {
        &self.child_keys
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn child_columns(&self) -> &[Column] {
        &self.child_columns
    }

    pub fn parent_columns(&self) -> &[Column] {
        &self.parent_columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.child_columns
            .iter()
            .chain(&self.parent_columns)
            .find(|c| c.name() == name)
    }

    /// All attribute columns, child first.
    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.child_columns.iter().chain(&self.parent_columns)
    }

    /// Row indices grouped by cluster id (sorted by id).
    pub fn clusters(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (r, id) in self.cluster_ids.iter().enumerate() {
            groups.entry(id.as_str()).or_default().push(r);
        }
        groups
    }

    pub fn with_parent_column(&self, column: Column) -> Result<Self> {
        let i = self
            .parent_columns
            .iter()
            .position(|c| c.name() == column.name())
            .ok_or_else(|| Error::UnknownColumn {
                table: self.schema.parent.name.clone(),
                column: column.name().to_string(),
            })?;
        if column.len() != self.n_rows() {
            return Err(Error::invalid("replacement column has wrong length"));
        }
        let mut out = self.clone();
        out.parent_columns[i] = column;
        Ok(out)
    }
}

/// Repeats parent attributes onto every child row.
pub fn join_as_one(d: &MultilevelDataset) -> Result<FlatTable> {
    if d.orphan_count() > 0 {
        return Err(Error::invalid(format!(
            "cannot join: {} child rows have no parent",
            d.orphan_count()
        )));
    }
    let parents: Vec<usize> = d.child_clusters().iter().map(|c| c.unwrap()).collect();
    FlatTable::new(
        d.schema().clone(),
        d.child().keys.clone(),
        d.foreign_keys().to_vec(),
        d.child().columns.clone(),
        d.parent().columns.iter().map(|c| c.select(&parents)).collect(),
    )
}

fn same_cell(col: &Column, a: usize, b: usize) -> bool {
    match &col.data {
        ColumnData::Numeric(v) => v[a] == v[b],
        ColumnData::Categorical(v) => v[a] == v[b],
    }
}

/// Rebuilds the parent table from a flat table. Fails on the first cluster whose
/// parent attributes are not identical across its rows.
pub fn split_tables(flat: &FlatTable) -> Result<MultilevelDataset> {
    let groups = flat.clusters();
    let mut first_rows = Vec::with_capacity(groups.len());
    for (id, rows) in &groups {
        for col in flat.parent_columns() {
            if rows[1..].iter().any(|&r| !same_cell(col, rows[0], r)) {
                return Err(Error::Inconsistent {
                    cluster: id.to_string(),
                    column: col.name().to_string(),
                });
            }
        }
        first_rows.push(rows[0]);
    }
    let schema = flat.schema().clone();
    let parent = Table::new(
        schema.parent.name.clone(),
        groups.keys().map(|k| k.to_string()).collect(),
        flat.parent_columns().iter().map(|c| c.select(&first_rows)).collect(),
    );
    let child = Table::new(
        schema.child.name.clone(),
        flat.child_keys().to_vec(),
        flat.child_columns().to_vec(),
    );
    MultilevelDataset::new(schema, parent, child, flat.cluster_ids().to_vec(), LoadMode::Strict)
}
