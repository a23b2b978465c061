use serde::{Deserialize, Serialize};

use super::metrics::{contingency_similarity, correlation_similarity, eta_squared_similarity, ksc, tvc};
use super::mi::{mi_similarity, MiColumn, DEFAULT_BINS};
use super::score::{mean, MetricScore, SkippedMetric};
use super::{aligned_codes, collect};
use crate::data::{Column, ColumnData, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinTableReport {
    pub table: String,
    pub marginal: Vec<MetricScore>,
    pub pairwise: Vec<MetricScore>,
    pub skipped: Vec<SkippedMetric>,
    pub marginal_avg: Option<f64>,
    /// Absent for single-column tables.
    pub pairwise_avg: Option<f64>,
    pub table_avg: f64,
}

enum Side<'a> {
    Num(&'a [f64]),
    Cat(Vec<u32>),
}

fn sides<'a>(real: &'a Column, synth: &'a Column) -> Result<(Side<'a>, Side<'a>)> {
    match (&real.data, &synth.data) {
        (ColumnData::Numeric(r), ColumnData::Numeric(s)) => Ok((Side::Num(r), Side::Num(s))),
        (ColumnData::Categorical(_), ColumnData::Categorical(_)) => {
            let (r, s) = aligned_codes(real, synth);
            Ok((Side::Cat(r), Side::Cat(s)))
        }
        _ => Err(Error::invalid(format!(
            "column `{}` has different kinds in real and synthetic data",
            real.name()
        ))),
    }
}

/// Dispatches a column pair to the matching pairwise metric.
pub(crate) fn pair_score(
    a_real: &Column,
    a_synth: &Column,
    b_real: &Column,
    b_synth: &Column,
    prefix: &str,
) -> Result<MetricScore> {
    let (ar, as_) = sides(a_real, a_synth)?;
    let (br, bs) = sides(b_real, b_synth)?;
    let label = format!("{}|{}", a_real.name(), b_real.name());
    let score = match (&ar, &as_, &br, &bs) {
        (Side::Num(ar), Side::Num(as_), Side::Num(br), Side::Num(bs)) => {
            correlation_similarity((ar, br), (as_, bs))?.renamed(format!("{prefix}correlation:{label}"))
        }
        (Side::Cat(ar), Side::Cat(as_), Side::Cat(br), Side::Cat(bs)) => {
            contingency_similarity((ar, br), (as_, bs))?.renamed(format!("{prefix}contingency:{label}"))
        }
        (Side::Num(ar), Side::Num(as_), Side::Cat(br), Side::Cat(bs)) => {
            eta_squared_similarity((ar, br.as_slice()), (as_, bs.as_slice()))?
                .renamed(format!("{prefix}eta_squared:{label}"))
        }
        (Side::Cat(ar), Side::Cat(as_), Side::Num(br), Side::Num(bs)) => {
            eta_squared_similarity((br, ar.as_slice()), (bs, as_.as_slice()))?
                .renamed(format!("{prefix}eta_squared:{label}"))
        }
        _ => unreachable!("sides() returns matching kinds"),
    };
    Ok(score)
}

pub(crate) fn mi_columns<'a>(real: &'a [Column], synth: &'a [Column]) -> (Vec<MiOwned<'a>>, Vec<MiOwned<'a>>) {
    real.iter()
        .zip(synth)
        .map(|(r, s)| match (&r.data, &s.data) {
            (ColumnData::Numeric(a), ColumnData::Numeric(b)) => (MiOwned::Num(a), MiOwned::Num(b)),
            _ => {
                let (a, b) = aligned_codes(r, s);
                (MiOwned::Cat(a), MiOwned::Cat(b))
            }
        })
        .unzip()
}

pub(crate) enum MiOwned<'a> {
    Num(&'a [f64]),
    Cat(Vec<u32>),
}

impl MiOwned<'_> {
    pub(crate) fn view(&self) -> MiColumn<'_> {
        match self {
            MiOwned::Num(v) => MiColumn::Numeric(v),
            MiOwned::Cat(v) => MiColumn::Categorical(v),
        }
    }
}

/// Marginal and pairwise fidelity of one table.
pub fn within_table_report(real: &Table, synth: &Table) -> Result<WithinTableReport> {
    let mut synth_cols = Vec::with_capacity(real.columns.len());
    for col in &real.columns {
        let s = synth.column(col.name()).ok_or_else(|| Error::UnknownColumn {
            table: synth.name.clone(),
            column: col.name().to_string(),
        })?;
        synth_cols.push(s.clone());
    }
    let mut marginal = Vec::new();
    let mut pairwise = Vec::new();
    let mut skipped = Vec::new();

    for (r, s) in real.columns.iter().zip(&synth_cols) {
        let name = r.name();
        let result = match sides(r, s)? {
            (Side::Num(a), Side::Num(b)) => ksc(a, b).map(|m| m.renamed(format!("ksc:{name}"))),
            (Side::Cat(a), Side::Cat(b)) => tvc(&a, &b).map(|m| m.renamed(format!("tvc:{name}"))),
            _ => unreachable!(),
        };
        collect(result, format!("marginal:{name}"), &mut marginal, &mut skipped)?;
    }

    let p = real.columns.len();
    for i in 0..p {
        for j in (i + 1)..p {
            let (ri, rj) = (&real.columns[i], &real.columns[j]);
            let result = pair_score(ri, &synth_cols[i], rj, &synth_cols[j], "");
            collect(result, format!("pair:{}|{}", ri.name(), rj.name()), &mut pairwise, &mut skipped)?;
        }
    }
    if p >= 2 {
        let (mr, ms) = mi_columns(&real.columns, &synth_cols);
        let vr: Vec<MiColumn> = mr.iter().map(MiOwned::view).collect();
        let vs: Vec<MiColumn> = ms.iter().map(MiOwned::view).collect();
        let result = mi_similarity(&vr, &vs, DEFAULT_BINS).map(|m| m.renamed(format!("mi:{}", real.name)));
        collect(result, format!("mi:{}", real.name), &mut pairwise, &mut skipped)?;
    }

    let marginal_avg = mean(marginal.iter().map(|m| m.value));
    let pairwise_avg = mean(pairwise.iter().map(|m| m.value));
    let table_avg = match (marginal_avg, pairwise_avg) {
        (Some(a), Some(b)) => (a + b) / 2.0,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(Error::degenerate(format!(
                "table `{}` has no scoreable columns",
                real.name
            )))
        }
    };
    Ok(WithinTableReport {
        table: real.name.clone(),
        marginal,
        pairwise,
        skipped,
        marginal_avg,
        pairwise_avg,
        table_avg,
    })
}
