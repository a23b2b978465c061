//! Multilevel data model: schema, validated parent/child datasets, the
//! join-as-one representation, decomposition and delimited-text I/O.

mod dataset;
mod decompose;
mod flat;
pub mod io;
mod schema;
mod table;
#[cfg(test)]
pub(crate) mod testing;

pub use dataset::{LoadMode, MultilevelDataset};
pub use decompose::{decompose, mean_column_name, recompose, DecomposedDataset, MEAN_SUFFIX};
pub use flat::{join_as_one, split_tables, FlatTable};
pub use io::{load_dataset, load_flat, save_dataset, save_flat, LoadOptions};
pub use schema::{ColumnKind, ColumnRole, ColumnSpec, MultilevelSchema, TableSpec};
pub use table::{format_number, Column, ColumnData, Table};
