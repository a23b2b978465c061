use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, ColumnSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Indices into the column's category list.
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }
}

/// A typed column; categorical columns carry their resolved category list in `spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub spec: ColumnSpec,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            spec: ColumnSpec::numeric(name),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>, codes: Vec<u32>) -> Self {
        debug_assert!(codes.iter().all(|&c| (c as usize) < categories.len()));
        Self {
            spec: ColumnSpec::categorical(name, categories),
            data: ColumnData::Categorical(codes),
        }
    }

    /// Builds a categorical column from string labels; categories are the
    /// sorted distinct labels.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut cats: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        cats.sort();
        cats.dedup();
        let codes = labels
            .iter()
            .map(|s| cats.binary_search_by(|c| c.as_str().cmp(s.as_ref())).unwrap() as u32)
            .collect();
        Self::categorical(name, cats, codes)
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.spec.kind
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_codes(&self) -> Option<&[u32]> {
        match &self.data {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    pub fn categories(&self) -> &[String] {
        self.spec.categories.as_deref().unwrap_or(&[])
    }

    /// Text rendering of one cell, as written to delimited files.
    pub fn cell_text(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) => format_number(v[row]),
            ColumnData::Categorical(v) => self.categories()[v[row] as usize].clone(),
        }
    }

    pub(crate) fn select(&self, rows: &[usize]) -> Column {
        Column {
            spec: self.spec.clone(),
            data: self.data.select(rows),
        }
    }
}

/// Shortest text that parses back to the same f64.
pub fn format_number(x: f64) -> String {
    let s = format!("{x}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(x));
    s
}

/// A keyed table: one primary-key string per row plus attribute columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub keys: Vec<String>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(name: impl Into<String>, keys: Vec<String>, columns: Vec<Column>) -> Self {
        Self {
            name: name.into(),
            keys,
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name() == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name() == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name() == name)
    }

    pub(crate) fn select(&self, rows: &[usize]) -> Table {
        Table {
            name: self.name.clone(),
            keys: rows.iter().map(|&r| self.keys[r].clone()).collect(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }
}
