//! Delimited-text I/O for parent, child and flat (joined) tables.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::dataset::{LoadMode, MultilevelDataset};
use super::flat::FlatTable;
use super::schema::{ColumnKind, ColumnSpec, MultilevelSchema, TableSpec};
use super::table::{Column, ColumnData, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub mode: LoadMode,
    pub delimiter: u8,
    /// Reject categories not already listed in the schema. Used when loading
    /// synthetic data against a schema resolved from the real data.
    pub closed_categories: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            mode: LoadMode::Strict,
            delimiter: b',',
            closed_categories: false,
        }
    }
}

impl LoadOptions {
    pub fn audit(mut self) -> Self {
        self.mode = LoadMode::Audit;
        self
    }

    pub fn closed(mut self) -> Self {
        self.closed_categories = true;
        self
    }
}

fn is_missing(raw: &str) -> bool {
    matches!(raw, "" | "NA" | "NaN" | "nan" | "null")
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_raw<R: Read>(reader: R, origin: &str, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |e: csv::Error| Error::Csv {
        path: origin.to_string(),
        message: e.to_string(),
    };
    let header = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn header_index(raw: &RawTable, table: &str, name: &str) -> Result<usize> {
    raw.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::UnknownColumn {
            table: table.to_string(),
            column: name.to_string(),
        })
}

fn key_column(raw: &RawTable, table: &str, name: &str) -> Result<Vec<String>> {
    let idx = header_index(raw, table, name)?;
    raw.rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let v = &row[idx];
            if is_missing(v) {
                Err(Error::MissingValue {
                    table: table.to_string(),
                    row: r + 1,
                    column: name.to_string(),
                })
            } else {
                Ok(v.clone())
            }
        })
        .collect()
}

fn parse_column(raw: &RawTable, table: &str, spec: &ColumnSpec, closed: bool) -> Result<Column> {
    let idx = header_index(raw, table, &spec.name)?;
    let missing = |row: usize| Error::MissingValue {
        table: table.to_string(),
        row: row + 1,
        column: spec.name.clone(),
    };
    match spec.kind {
        ColumnKind::Numeric => {
            let mut values = Vec::with_capacity(raw.rows.len());
            for (r, row) in raw.rows.iter().enumerate() {
                let text = &row[idx];
                if is_missing(text) {
                    return Err(missing(r));
                }
                let x: f64 = text.parse().map_err(|_| Error::Coercion {
                    table: table.to_string(),
                    row: r + 1,
                    column: spec.name.clone(),
                    value: text.clone(),
                })?;
                if !x.is_finite() {
                    return Err(missing(r));
                }
                values.push(x);
            }
            Ok(Column {
                spec: spec.clone(),
                data: ColumnData::Numeric(values),
            })
        }
        ColumnKind::Categorical => {
            let mut categories = spec.categories.clone().unwrap_or_default();
            let known: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
            let mut extra = BTreeSet::new();
            for (r, row) in raw.rows.iter().enumerate() {
                let text = row[idx].as_str();
                if is_missing(text) {
                    return Err(missing(r));
                }
                if !known.contains(text) {
                    if closed {
                        return Err(Error::UnknownCategory {
                            column: spec.name.clone(),
                            value: text.to_string(),
                        });
                    }
                    extra.insert(text.to_string());
                }
            }
            categories.extend(extra);
            let lookup: HashMap<&str, u32> = categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i as u32))
                .collect();
            let codes = raw.rows.iter().map(|row| lookup[row[idx].as_str()]).collect();
            let mut spec = spec.clone();
            spec.categories = Some(categories);
            Ok(Column {
                spec,
                data: ColumnData::Categorical(codes),
            })
        }
    }
}

fn check_header(raw: &RawTable, table: &str, allowed: &[&str]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for h in &raw.header {
        if !allowed.contains(&h.as_str()) {
            return Err(Error::UnknownColumn {
                table: table.to_string(),
                column: h.clone(),
            });
        }
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("table `{table}`: header repeats `{h}`")));
        }
    }
    Ok(())
}

fn table_from_raw(raw: &RawTable, spec: &TableSpec, closed: bool) -> Result<(Table, Option<Vec<String>>)> {
    let mut allowed: Vec<&str> = vec![spec.primary_key.as_str()];
    if let Some(fk) = &spec.foreign_key {
        allowed.push(fk);
    }
    allowed.extend(spec.columns.iter().map(|c| c.name.as_str()));
    check_header(raw, &spec.name, &allowed)?;
    let keys = key_column(raw, &spec.name, &spec.primary_key)?;
    let fks = match &spec.foreign_key {
        Some(fk) => Some(key_column(raw, &spec.name, fk)?),
        None => None,
    };
    let columns = spec
        .columns
        .iter()
        .map(|c| parse_column(raw, &spec.name, c, closed))
        .collect::<Result<Vec<_>>>()?;
    Ok((Table::new(spec.name.clone(), keys, columns), fks))
}

/// Loads a dataset from already-open readers (used by tests and by `load_dataset`).
pub fn load_dataset_from_readers<P: Read, C: Read>(
    parent: P,
    child: C,
    schema: &MultilevelSchema,
    opts: LoadOptions,
) -> Result<MultilevelDataset> {
    let praw = read_raw(parent, &schema.parent.name, opts.delimiter)?;
    let craw = read_raw(child, &schema.child.name, opts.delimiter)?;
    let (ptable, _) = table_from_raw(&praw, &schema.parent, opts.closed_categories)?;
    let (ctable, fks) = table_from_raw(&craw, &schema.child, opts.closed_categories)?;
    MultilevelDataset::new(schema.clone(), ptable, ctable, fks.unwrap(), opts.mode)
}

pub fn load_dataset(
    parent_file: &Path,
    child_file: &Path,
    schema: &MultilevelSchema,
    opts: LoadOptions,
) -> Result<MultilevelDataset> {
    load_dataset_from_readers(open(parent_file)?, open(child_file)?, schema, opts).map_err(|e| match e {
        Error::Csv { message, path } => Error::Csv {
            path: format!("{path} ({} / {})", parent_file.display(), child_file.display()),
            message,
        },
        other => other,
    })
}

/// Reads a joined table: child key, cluster id, child attributes and parent attributes.
pub fn load_flat_from_reader<R: Read>(
    reader: R,
    schema: &MultilevelSchema,
    delimiter: u8,
    closed_categories: bool,
) -> Result<FlatTable> {
    let raw = read_raw(reader, &schema.child.name, delimiter)?;
    let fk = schema.foreign_key();
    let mut allowed: Vec<&str> = vec![schema.child.primary_key.as_str(), fk];
    allowed.extend(schema.child.columns.iter().map(|c| c.name.as_str()));
    allowed.extend(schema.parent.columns.iter().map(|c| c.name.as_str()));
    check_header(&raw, &schema.child.name, &allowed)?;
    let child_keys = key_column(&raw, &schema.child.name, &schema.child.primary_key)?;
    let cluster_ids = key_column(&raw, &schema.child.name, fk)?;
    let parse_all = |specs: &[ColumnSpec]| {
        specs
            .iter()
            .map(|c| parse_column(&raw, &schema.child.name, c, closed_categories))
            .collect::<Result<Vec<_>>>()
    };
    FlatTable::new(
        schema.clone(),
        child_keys,
        cluster_ids,
        parse_all(&schema.child.columns)?,
        parse_all(&schema.parent.columns)?,
    )
}

pub fn load_flat(path: &Path, schema: &MultilevelSchema, delimiter: u8, closed_categories: bool) -> Result<FlatTable> {
    load_flat_from_reader(open(path)?, schema, delimiter, closed_categories)
}

fn write_rows<W: Write>(
    out: W,
    delimiter: u8,
    header: Vec<String>,
    n_rows: usize,
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let err = |e: csv::Error| Error::Csv {
        path: "<output>".into(),
        message: e.to_string(),
    };
    wtr.write_record(&header).map_err(err)?;
    for r in 0..n_rows {
        let rec: Vec<String> = (0..header.len()).map(|c| cell(r, c)).collect();
        wtr.write_record(&rec).map_err(err)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })
}

pub fn write_parent<W: Write>(d: &MultilevelDataset, out: W, delimiter: u8) -> Result<()> {
    let p = d.parent();
    let mut header = vec![d.schema().parent.primary_key.clone()];
    header.extend(p.columns.iter().map(|c| c.name().to_string()));
    write_rows(out, delimiter, header, p.n_rows(), |r, c| {
        if c == 0 {
            p.keys[r].clone()
        } else {
            p.columns[c - 1].cell_text(r)
        }
    })
}

pub fn write_child<W: Write>(d: &MultilevelDataset, out: W, delimiter: u8) -> Result<()> {
    let ch = d.child();
    let mut header = vec![d.schema().child.primary_key.clone(), d.schema().foreign_key().to_string()];
    header.extend(ch.columns.iter().map(|c| c.name().to_string()));
    write_rows(out, delimiter, header, ch.n_rows(), |r, c| match c {
        0 => ch.keys[r].clone(),
        1 => d.foreign_keys()[r].clone(),
        _ => ch.columns[c - 2].cell_text(r),
    })
}

pub fn write_flat<W: Write>(flat: &FlatTable, out: W, delimiter: u8) -> Result<()> {
    let schema = flat.schema();
    let cols: Vec<&Column> = flat.child_columns().iter().chain(flat.parent_columns()).collect();
    let mut header = vec![schema.child.primary_key.clone(), schema.foreign_key().to_string()];
    header.extend(cols.iter().map(|c| c.name().to_string()));
    write_rows(out, delimiter, header, flat.n_rows(), |r, c| match c {
        0 => flat.child_keys()[r].clone(),
        1 => flat.cluster_ids()[r].clone(),
        _ => cols[c - 2].cell_text(r),
    })
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_dataset(d: &MultilevelDataset, parent_file: &Path, child_file: &Path, delimiter: u8) -> Result<()> {
    write_parent(d, create(parent_file)?, delimiter)?;
    write_child(d, create(child_file)?, delimiter)
}

pub fn save_flat(flat: &FlatTable, path: &Path, delimiter: u8) -> Result<()> {
    write_flat(flat, create(path)?, delimiter)
}
