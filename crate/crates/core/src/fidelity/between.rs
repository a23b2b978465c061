use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::icc::{estimate_variance_components, icc_similarity_value, reliability_similarity_value};
use super::metrics::ksc;
use super::mi::{mi_block_similarity, MiColumn, DEFAULT_BINS};
use super::score::{mean, MetricScore, SkippedMetric};
use super::within::{mi_columns, pair_score, MiOwned};
use super::collect;
use crate::data::{Column, ColumnData, FlatTable, MultilevelDataset};
use crate::error::{Error, Result};

/// Numeric tolerance for exact-copy detection.
pub const MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenTableReport {
    pub referential_integrity: MetricScore,
    pub cardinality_shape: MetricScore,
    pub khop: Vec<MetricScore>,
    pub icc: Vec<MetricScore>,
    pub reliability: Vec<MetricScore>,
    pub skipped: Vec<SkippedMetric>,
    pub between_avg: f64,
}

impl BetweenTableReport {
    pub fn scores(&self) -> impl Iterator<Item = &MetricScore> {
        [&self.referential_integrity, &self.cardinality_shape]
            .into_iter()
            .chain(&self.khop)
            .chain(&self.icc)
            .chain(&self.reliability)
    }
}

/// Share of child rows whose foreign key resolves to a parent.
pub fn referential_integrity(d: &MultilevelDataset) -> Result<MetricScore> {
    let n = d.n_children();
    if n == 0 {
        return Err(Error::invalid("referential integrity: empty child table"));
    }
    let linked = n - d.orphan_count();
    Ok(MetricScore::new("referential_integrity", linked as f64 / n as f64))
}

/// KSC between the cluster-size samples (childless parents count as size 0).
pub fn cardinality_shape_similarity(real: &MultilevelDataset, synth: &MultilevelDataset) -> Result<MetricScore> {
    let sizes = |d: &MultilevelDataset| -> Vec<f64> { d.cluster_sizes().into_iter().map(|n| n as f64).collect() };
    let (r, s) = (sizes(real), sizes(synth));
    if r.is_empty() || s.is_empty() {
        return Err(Error::invalid("cardinality shape: no clusters"));
    }
    Ok(ksc(&r, &s)?.renamed("cardinality_shape"))
}

fn joined(d: &MultilevelDataset, parent_col: &str, child_col: &str) -> Result<(Column, Column)> {
    let (rows, p) = d.parent_column_on_children(parent_col)?;
    let c = d.child_column(child_col).ok_or_else(|| Error::UnknownColumn {
        table: d.child().name.clone(),
        column: child_col.to_string(),
    })?;
    Ok((p, c.select(&rows)))
}

/// One-hop similarity of a parent column against a child column.
pub fn khop_score(
    real: &MultilevelDataset,
    synth: &MultilevelDataset,
    parent_col: &str,
    child_col: &str,
) -> Result<MetricScore> {
    let (pr, cr) = joined(real, parent_col, child_col)?;
    let (ps, cs) = joined(synth, parent_col, child_col)?;
    pair_score(&pr, &ps, &cr, &cs, "khop_")
}

/// Every parent × child pair plus the cross-block MI similarity.
pub fn khop_scores(real: &MultilevelDataset, synth: &MultilevelDataset) -> Result<(Vec<MetricScore>, Vec<SkippedMetric>)> {
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let parents = real.parent_column_names();
    let children = real.child_column_names();
    for p in &parents {
        for c in &children {
            collect(khop_score(real, synth, p, c), format!("khop:{p}|{c}"), &mut scores, &mut skipped)?;
        }
    }
    if !parents.is_empty() && !children.is_empty() {
        let block = |d: &MultilevelDataset| -> Result<(Vec<Column>, Vec<Column>)> {
            let mut pc = Vec::new();
            let mut cc = Vec::new();
            for p in &parents {
                pc.push(d.parent_column_on_children(p)?.1);
            }
            let rows: Vec<usize> = (0..d.n_children()).filter(|&r| d.child_clusters()[r].is_some()).collect();
            for c in &children {
                let col = d.child_column(c).ok_or_else(|| Error::UnknownColumn {
                    table: d.child().name.clone(),
                    column: c.clone(),
                })?;
                cc.push(col.select(&rows));
            }
            Ok((pc, cc))
        };
        let (rp, rc) = block(real)?;
        let (sp, sc) = block(synth)?;
        let (rpo, spo) = mi_columns(&rp, &sp);
        let (rco, sco) = mi_columns(&rc, &sc);
        let result = mi_block_similarity(&views(&rpo), &views(&rco), &views(&spo), &views(&sco), DEFAULT_BINS);
        collect(result, "khop_mi".into(), &mut scores, &mut skipped)?;
    }
    Ok((scores, skipped))
}

/// Referential integrity of the synthetic data, cardinality shape, the
/// one-hop family and per-column ICC and reliability similarity.
pub fn between_table_report(real: &MultilevelDataset, synth: &MultilevelDataset) -> Result<BetweenTableReport> {
    let referential_integrity = referential_integrity(synth)?;
    let cardinality_shape = cardinality_shape_similarity(real, synth)?;
    let (khop, mut skipped) = khop_scores(real, synth)?;
    let mut icc = Vec::new();
    let mut reliability = Vec::new();
    for col in real.child_column_names() {
        let both = estimate_variance_components(real, &col)
            .and_then(|r| estimate_variance_components(synth, &col).map(|s| (r, s)));
        match both {
            Ok((r, s)) => {
                icc.push(MetricScore::new(format!("icc:{col}"), icc_similarity_value(r.icc, s.icc)));
                reliability.push(MetricScore::new(
                    format!("reliability:{col}"),
                    reliability_similarity_value(r.reliability, s.reliability),
                ));
            }
            Err(Error::Degenerate(reason)) | Err(Error::Invalid(reason)) => skipped.push(SkippedMetric {
                name: format!("icc:{col}"),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    let mut report = BetweenTableReport {
        referential_integrity,
        cardinality_shape,
        khop,
        icc,
        reliability,
        skipped,
        between_avg: 0.0,
    };
    report.between_avg = mean(report.scores().map(|m| m.value)).unwrap_or(0.0);
    Ok(report)
}

fn views<'a>(o: &'a [MiOwned]) -> Vec<MiColumn<'a>> {
    o.iter().map(MiOwned::view).collect()
}

enum Cell<'a> {
    Num(f64),
    Label(&'a str),
}

fn labels<'a>(cells: &[Cell<'a>]) -> Vec<&'a str> {
    cells
        .iter()
        .filter_map(|c| match c {
            Cell::Label(s) => Some(*s),
            Cell::Num(_) => None,
        })
        .collect()
}

fn row_cells<'a>(cols: &[&'a Column], row: usize) -> Vec<Cell<'a>> {
    cols.iter()
        .map(|c| match &c.data {
            ColumnData::Numeric(v) => Cell::Num(v[row]),
            ColumnData::Categorical(v) => Cell::Label(&c.categories()[v[row] as usize]),
        })
        .collect()
}

/// Share of synthetic rows with no exact counterpart among real rows.
/// Keys are ignored; numeric fields match within [`MATCH_TOLERANCE`].
pub fn generalization_score(real: &FlatTable, synth: &FlatTable) -> Result<MetricScore> {
    let real_cols: Vec<&Column> = real.columns().collect();
    let mut synth_cols = Vec::with_capacity(real_cols.len());
    for c in &real_cols {
        let s = synth.column(c.name()).ok_or_else(|| Error::UnknownColumn {
            table: "synthetic".into(),
            column: c.name().to_string(),
        })?;
        if s.kind() != c.kind() {
            return Err(Error::invalid(format!("column `{}` has different kinds", c.name())));
        }
        synth_cols.push(s);
    }
    if synth.n_rows() == 0 {
        return Ok(MetricScore::new("generalization", 1.0));
    }
    let first_num = real_cols.iter().position(|c| c.as_numeric().is_some());
    // Bucket real rows by their categorical labels, sorted by the first numeric field.
    let mut buckets: BTreeMap<Vec<&str>, Vec<(f64, usize)>> = BTreeMap::new();
    let real_rows: Vec<Vec<Cell>> = (0..real.n_rows()).map(|r| row_cells(&real_cols, r)).collect();
    for (i, cells) in real_rows.iter().enumerate() {
        let key: Vec<&str> = labels(cells);
        let lead = first_num.map_or(0.0, |k| match cells[k] {
            Cell::Num(v) => v,
            Cell::Label(_) => 0.0,
        });
        buckets.entry(key).or_default().push((lead, i));
    }
    for b in buckets.values_mut() {
        b.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let same = |a: &[Cell], b: &[Cell]| {
        a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Cell::Num(x), Cell::Num(y)) => (x - y).abs() <= MATCH_TOLERANCE,
            (Cell::Label(x), Cell::Label(y)) => x == y,
            _ => false,
        })
    };
    let mut novel = 0usize;
    for r in 0..synth.n_rows() {
        let cells = row_cells(&synth_cols, r);
        let matched = buckets.get(&labels(&cells)).is_some_and(|bucket| {
            let lead = first_num.map_or(0.0, |k| match cells[k] {
                Cell::Num(v) => v,
                Cell::Label(_) => 0.0,
            });
            let lo = bucket.partition_point(|e| e.0 < lead - MATCH_TOLERANCE);
            bucket[lo..]
                .iter()
                .take_while(|e| e.0 <= lead + MATCH_TOLERANCE)
                .any(|&(_, i)| same(&real_rows[i], &cells))
        });
        if !matched {
            novel += 1;
        }
    }
    Ok(MetricScore::new("generalization", novel as f64 / synth.n_rows() as f64))
}
