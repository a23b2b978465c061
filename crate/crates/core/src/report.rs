//! The unified quality report, candidate averaging, flat exports and
//! plot-data series.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{join_as_one, ColumnData, MultilevelDataset, Table};
use crate::efficacy::{efficacy_report, EfficacyMetric, Level, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::fidelity::{
    between_table_report, generalization_score, within_table_report, BetweenTableReport, MetricScore, SkippedMetric,
    WithinTableReport,
};
use crate::sim::StudyResult;

pub const REPORT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(role: &str, path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyEntry {
    pub target: String,
    pub level: Level,
    pub metric: EfficacyMetric,
    pub m_tstr: f64,
    pub m_trtr: f64,
    pub score: MetricScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacySection {
    pub entries: Vec<EfficacyEntry>,
    pub skipped: Vec<SkippedMetric>,
    pub child_avg: Option<f64>,
    pub parent_avg: Option<f64>,
    pub overall_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallAverages {
    pub within: MetricScore,
    pub between: MetricScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficacy: Option<MetricScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedReport {
    pub report_version: u32,
    pub tool_version: String,
    pub seed: u64,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    pub candidates: usize,
    pub within: Vec<WithinTableReport>,
    pub between: BetweenTableReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficacy: Option<EfficacySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalization: Option<MetricScore>,
    pub overall: OverallAverages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluationOptions {
    pub skip_efficacy: bool,
    pub folds: usize,
    pub seed: u64,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            skip_efficacy: false,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

fn evaluate_one(real: &MultilevelDataset, synth: &MultilevelDataset, opts: &EvaluationOptions) -> Result<UnifiedReport> {
    let within = vec![
        within_table_report(real.parent(), synth.parent())?,
        within_table_report(real.child(), synth.child())?,
    ];
    let between = between_table_report(real, synth)?;
    let efficacy = if opts.skip_efficacy {
        None
    } else {
        let e = efficacy_report(real, synth, opts.folds, opts.seed)?;
        Some(EfficacySection {
            entries: e
                .child
                .iter()
                .chain(&e.parent)
                .map(|s| EfficacyEntry {
                    target: s.target.clone(),
                    level: s.level,
                    metric: s.metric,
                    m_tstr: s.m_tstr,
                    m_trtr: s.m_trtr,
                    score: MetricScore::new(format!("efficacy:{}", s.target), s.score),
                })
                .collect(),
            skipped: e.skipped,
            child_avg: e.child_avg,
            parent_avg: e.parent_avg,
            overall_avg: e.overall_avg,
        })
    };
    let generalization = Some(generalization_score(&join_as_one(real)?, &join_as_one(synth)?)?);
    let within_avg = within.iter().map(|w| w.table_avg).sum::<f64>() / within.len() as f64;
    let overall = OverallAverages {
        within: MetricScore::new("within_avg", within_avg),
        between: MetricScore::new("between_avg", between.between_avg),
        efficacy: efficacy.as_ref().map(|e| MetricScore::new("efficacy_avg", e.overall_avg)),
    };
    Ok(UnifiedReport {
        report_version: REPORT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        seed: opts.seed,
        inputs: Vec::new(),
        candidates: 1,
        within,
        between,
        efficacy,
        generalization,
        overall,
    })
}

/// Evaluates each candidate against the real data and averages the scores.
pub fn evaluate(real: &MultilevelDataset, candidates: &[MultilevelDataset], opts: &EvaluationOptions) -> Result<UnifiedReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no synthetic candidates to evaluate"));
    }
    let reports = candidates
        .iter()
        .map(|s| evaluate_one(real, s, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_reports(reports))
}

/// Mean that returns the common value exactly when all inputs are equal.
fn stable_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| stable_mean(&v))
}

fn average_scores<'a>(lists: impl Iterator<Item = &'a [MetricScore]>) -> Vec<MetricScore> {
    let mut order = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for list in lists {
        for m in list {
            let entry = values.entry(m.name.clone()).or_default();
            if entry.is_empty() {
                order.push(m.name.clone());
            }
            entry.push(m.value);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let v = stable_mean(&values[&name]);
            MetricScore::new(name, v)
        })
        .collect()
}

fn average_one(list: &[&MetricScore]) -> MetricScore {
    let v: Vec<f64> = list.iter().map(|m| m.value).collect();
    MetricScore::new(list[0].name.clone(), stable_mean(&v))
}

fn union_skipped<'a>(lists: impl Iterator<Item = &'a [SkippedMetric]>) -> Vec<SkippedMetric> {
    let mut out: Vec<SkippedMetric> = Vec::new();
    for s in lists.flatten() {
        if !out.iter().any(|o| o.name == s.name) {
            out.push(s.clone());
        }
    }
    out
}

fn average_reports(reports: Vec<UnifiedReport>) -> UnifiedReport {
    let n = reports.len();
    if n == 1 {
        return reports.into_iter().next().expect("one report");
    }
    let first = &reports[0];
    let within = (0..first.within.len())
        .map(|t| {
            let tables: Vec<&WithinTableReport> = reports.iter().map(|r| &r.within[t]).collect();
            WithinTableReport {
                table: tables[0].table.clone(),
                marginal: average_scores(tables.iter().map(|w| w.marginal.as_slice())),
                pairwise: average_scores(tables.iter().map(|w| w.pairwise.as_slice())),
                skipped: union_skipped(tables.iter().map(|w| w.skipped.as_slice())),
                marginal_avg: mean_opt(tables.iter().map(|w| w.marginal_avg)),
                pairwise_avg: mean_opt(tables.iter().map(|w| w.pairwise_avg)),
                table_avg: stable_mean(&tables.iter().map(|w| w.table_avg).collect::<Vec<_>>()),
            }
        })
        .collect();
    let b: Vec<&BetweenTableReport> = reports.iter().map(|r| &r.between).collect();
    let between = BetweenTableReport {
        referential_integrity: average_one(&b.iter().map(|x| &x.referential_integrity).collect::<Vec<_>>()),
        cardinality_shape: average_one(&b.iter().map(|x| &x.cardinality_shape).collect::<Vec<_>>()),
        khop: average_scores(b.iter().map(|x| x.khop.as_slice())),
        icc: average_scores(b.iter().map(|x| x.icc.as_slice())),
        reliability: average_scores(b.iter().map(|x| x.reliability.as_slice())),
        skipped: union_skipped(b.iter().map(|x| x.skipped.as_slice())),
        between_avg: stable_mean(&b.iter().map(|x| x.between_avg).collect::<Vec<_>>()),
    };
    let efficacy = first.efficacy.as_ref().map(|e0| {
        let sections: Vec<&EfficacySection> = reports.iter().filter_map(|r| r.efficacy.as_ref()).collect();
        let entries = e0
            .entries
            .iter()
            .map(|e| {
                let same: Vec<&EfficacyEntry> = sections
                    .iter()
                    .flat_map(|s| s.entries.iter())
                    .filter(|x| x.target == e.target && x.level == e.level)
                    .collect();
                let avg = |f: fn(&EfficacyEntry) -> f64| stable_mean(&same.iter().map(|x| f(x)).collect::<Vec<_>>());
                EfficacyEntry {
                    target: e.target.clone(),
                    level: e.level,
                    metric: e.metric,
                    m_tstr: avg(|x| x.m_tstr),
                    m_trtr: avg(|x| x.m_trtr),
                    score: MetricScore::new(e.score.name.clone(), avg(|x| x.score.value)),
                }
            })
            .collect();
        EfficacySection {
            entries,
            skipped: union_skipped(sections.iter().map(|s| s.skipped.as_slice())),
            child_avg: mean_opt(sections.iter().map(|s| s.child_avg)),
            parent_avg: mean_opt(sections.iter().map(|s| s.parent_avg)),
            overall_avg: stable_mean(&sections.iter().map(|s| s.overall_avg).collect::<Vec<_>>()),
        }
    });
    let generalization = {
        let g: Vec<&MetricScore> = reports.iter().filter_map(|r| r.generalization.as_ref()).collect();
        (!g.is_empty()).then(|| average_one(&g))
    };
    let overall = OverallAverages {
        within: average_one(&reports.iter().map(|r| &r.overall.within).collect::<Vec<_>>()),
        between: average_one(&reports.iter().map(|r| &r.overall.between).collect::<Vec<_>>()),
        efficacy: {
            let e: Vec<&MetricScore> = reports.iter().filter_map(|r| r.overall.efficacy.as_ref()).collect();
            (!e.is_empty()).then(|| average_one(&e))
        },
    };
    UnifiedReport {
        report_version: REPORT_VERSION,
        tool_version: first.tool_version.clone(),
        seed: first.seed,
        inputs: first.inputs.clone(),
        candidates: n,
        within,
        between,
        efficacy,
        generalization,
        overall,
    }
}

impl UnifiedReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per score: section, table, metric, value, category, overfit flag.
    pub fn rows(&self) -> Vec<ReportRow> {
        let row = |section: &str, table: &str, m: &MetricScore| ReportRow {
            section: section.to_string(),
            table: table.to_string(),
            metric: m.name.clone(),
            value: m.value,
            category: format!("{:?}", m.category),
            overfit: m.overfit,
        };
        let mut out = Vec::new();
        for w in &self.within {
            for m in w.marginal.iter().chain(&w.pairwise) {
                out.push(row("within", &w.table, m));
            }
        }
        for m in self.between.scores() {
            out.push(row("between", "", m));
        }
        if let Some(e) = &self.efficacy {
            for x in &e.entries {
                let level = match x.level {
                    Level::Child => "child",
                    Level::Parent => "parent",
                };
                out.push(row("efficacy", level, &x.score));
            }
        }
        if let Some(g) = &self.generalization {
            out.push(row("generalization", "", g));
        }
        out.push(row("overall", "", &self.overall.within));
        out.push(row("overall", "", &self.overall.between));
        if let Some(e) = &self.overall.efficacy {
            out.push(row("overall", "", e));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Csv {
            path: "report".into(),
            message: e.to_string(),
        };
        for r in self.rows() {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub table: String,
    pub metric: String,
    pub value: f64,
    pub category: String,
    pub overfit: bool,
}

/// An (x, y) curve for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<Option<f64>>>,
}

/// Condition-versus-criterion curves, one per method, criterion and coefficient.
pub fn study_plot_data(result: &StudyResult) -> Vec<PlotSeries> {
    let mut keys: Vec<(String, String, Option<String>)> = Vec::new();
    for c in &result.cells {
        let k = (c.method.clone(), c.criterion.clone(), c.coefficient.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, criterion, coef)| {
            let cells: Vec<_> = result
                .conditions
                .iter()
                .map(|&j| result.cell(j, &method, &criterion, coef.as_deref()))
                .collect();
            PlotSeries {
                name: match &coef {
                    Some(c) => format!("{method}:{criterion}:{c}"),
                    None => format!("{method}:{criterion}"),
                },
                x_label: "clusters".into(),
                y_label: criterion.clone(),
                x: result.conditions.iter().map(|&j| j as f64).collect(),
                y: cells.iter().map(|c| c.and_then(|c| c.value)).collect(),
                se: Some(cells.iter().map(|c| c.and_then(|c| c.mc_se)).collect()),
            }
        })
        .collect()
}

fn quantiles(values: &[f64], points: usize) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    (0..points)
        .map(|i| {
            let q = i as f64 / (points - 1) as f64;
            s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)]
        })
        .collect()
}

fn proportions(codes: &[u32], labels: &[String], own: &[String]) -> Vec<f64> {
    let mut counts = vec![0.0; labels.len()];
    for &c in codes {
        let i = labels.binary_search(&own[c as usize]).expect("label in union");
        counts[i] += 1.0;
    }
    let n = codes.len().max(1) as f64;
    counts.into_iter().map(|c| c / n).collect()
}

fn marginal_series(real: &Table, synth: &Table) -> Vec<PlotSeries> {
    let mut out = Vec::new();
    for rc in &real.columns {
        let Some(sc) = synth.column(rc.name()) else { continue };
        match (&rc.data, &sc.data) {
            (ColumnData::Numeric(a), ColumnData::Numeric(b)) if !a.is_empty() && !b.is_empty() => {
                let x: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
                for (who, v) in [("real", a), ("synthetic", b)] {
                    out.push(PlotSeries {
                        name: format!("{}:{}:{who}", real.name, rc.name()),
                        x_label: "quantile".into(),
                        y_label: rc.name().to_string(),
                        x: x.clone(),
                        y: quantiles(v, 11).into_iter().map(Some).collect(),
                        se: None,
                    });
                }
            }
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                let mut labels: Vec<String> = rc.categories().iter().chain(sc.categories()).cloned().collect();
                labels.sort();
                labels.dedup();
                for (who, codes, own) in [("real", a, rc.categories()), ("synthetic", b, sc.categories())] {
                    out.push(PlotSeries {
                        name: format!("{}:{}:{who}", real.name, rc.name()),
                        x_label: format!("category index of [{}]", labels.join(", ")),
                        y_label: "proportion".into(),
                        x: (0..labels.len()).map(|i| i as f64).collect(),
                        y: proportions(codes, &labels, own).into_iter().map(Some).collect(),
                        se: None,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

/// Real-versus-synthetic marginal curves (deciles or category shares).
pub fn marginal_plot_data(real: &MultilevelDataset, synth: &MultilevelDataset) -> Vec<PlotSeries> {
    let mut out = marginal_series(real.parent(), synth.parent());
    out.extend(marginal_series(real.child(), synth.child()));
    out
}
