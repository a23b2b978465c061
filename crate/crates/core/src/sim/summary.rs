use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-replication log: a PMSE (empty `coefficient`) or one
/// coefficient estimate, or the reason the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub condition: usize,
    pub replication: usize,
    pub method: String,
    pub coefficient: String,
    pub truth: Option<f64>,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn failed(condition: usize, replication: usize, method: &str, coefficient: &str, error: impl ToString) -> Self {
        Self {
            condition,
            replication,
            method: method.to_string(),
            coefficient: coefficient.to_string(),
            truth: None,
            estimate: None,
            se: None,
            lower: None,
            upper: None,
            error: Some(error.to_string()),
        }
    }

    pub fn pmse(condition: usize, replication: usize, method: &str, value: f64) -> Self {
        Self {
            estimate: Some(value),
            error: None,
            ..Self::failed(condition, replication, method, "", "")
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn write_log<W: Write>(log: &[ReplicationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv {
        path: "replication log".into(),
        message: e.to_string(),
    };
    for r in log {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<ReplicationRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Csv {
            path: "replication log".into(),
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub condition: usize,
    pub method: String,
    pub criterion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<String>,
    /// Absent when too few replications succeeded to define the criterion.
    pub value: Option<f64>,
    pub mc_se: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Predictive,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: ResultKind,
    pub master_seed: u64,
    pub replications: usize,
    pub conditions: Vec<usize>,
    pub methods: Vec<String>,
    #[serde(default)]
    pub coefficients: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_clusters: Option<usize>,
    pub cells: Vec<CellResult>,
}

impl StudyResult {
    pub fn cell(&self, condition: usize, method: &str, criterion: &str, coefficient: Option<&str>) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.condition == condition && c.method == method && c.criterion == criterion && c.coefficient.as_deref() == coefficient
        })
    }

    pub fn value(&self, condition: usize, method: &str, criterion: &str, coefficient: Option<&str>) -> Option<f64> {
        self.cell(condition, method, criterion, coefficient).and_then(|c| c.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study result serializes")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1).
fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

struct Group<'a> {
    ok: Vec<&'a ReplicationRecord>,
    failures: usize,
}

fn group<'a>(log: &'a [ReplicationRecord], condition: usize, method: &str, coefficient: &str) -> Group<'a> {
    let mut ok = Vec::new();
    let mut failures = 0;
    for r in log {
        if r.condition == condition && r.method == method && r.coefficient == coefficient {
            if r.is_ok() {
                ok.push(r);
            } else {
                failures += 1;
            }
        }
    }
    Group { ok, failures }
}

fn cell(condition: usize, method: &str, criterion: &str, coefficient: Option<&str>, g: &Group, value: Option<(f64, f64)>, flag: Option<&str>) -> CellResult {
    let value = value.filter(|(v, s)| v.is_finite() && s.is_finite());
    CellResult {
        condition,
        method: method.to_string(),
        criterion: criterion.to_string(),
        coefficient: coefficient.map(str::to_string),
        value: value.map(|v| v.0),
        mc_se: value.map(|v| v.1),
        successes: g.ok.len(),
        failures: g.failures,
        flag: match (flag, value) {
            (Some(f), _) => Some(f.to_string()),
            (None, None) => Some("insufficient_successes".into()),
            _ => None,
        },
    }
}

/// Mean PMSE with its Monte Carlo SE per condition and rule.
pub fn summarize_predictive(log: &[ReplicationRecord], conditions: &[usize], methods: &[String]) -> Vec<CellResult> {
    let mut cells = Vec::new();
    for &c in conditions {
        for m in methods {
            let g = group(log, c, m, "");
            let v: Vec<f64> = g.ok.iter().filter_map(|r| r.estimate).collect();
            let value = (v.len() >= 2).then(|| (mean(&v), sd(&v) / (v.len() as f64).sqrt()));
            cells.push(cell(c, m, "pmse", None, &g, value, None));
        }
    }
    cells
}

/// Relative (or, for a zero truth, absolute) coefficient bias, relative SE
/// bias and interval coverage per condition, method and coefficient.
pub fn summarize_recovery(log: &[ReplicationRecord], conditions: &[usize], methods: &[String], coefficients: &[String]) -> Vec<CellResult> {
    let mut cells = Vec::new();
    for &c in conditions {
        for m in methods {
            for coef in coefficients {
                let g = group(log, c, m, coef);
                let k = g.ok.len();
                let est: Vec<f64> = g.ok.iter().filter_map(|r| r.estimate).collect();
                let se: Vec<f64> = g.ok.iter().filter_map(|r| r.se).collect();
                let theta = g.ok.first().and_then(|r| r.truth);
                let enough = k >= 2 && est.len() == k && se.len() == k;
                let name = Some(coef.as_str());

                let (bias_name, flag, bias) = match theta {
                    Some(t) if t != 0.0 => (
                        "rel_coef_bias_pct",
                        None,
                        enough.then(|| (100.0 * (mean(&est) - t) / t, 100.0 * sd(&est) / (k as f64).sqrt() / t.abs())),
                    ),
                    _ => (
                        "coef_bias",
                        Some("zero_truth_absolute_bias"),
                        enough.then(|| (mean(&est) - theta.unwrap_or(0.0), sd(&est) / (k as f64).sqrt())),
                    ),
                };
                cells.push(cell(c, m, bias_name, name, &g, bias, flag));

                let se_bias = enough.then(|| {
                    let emp = sd(&est);
                    (100.0 * (mean(&se) - emp) / emp, 100.0 * sd(&se) / (k as f64).sqrt() / emp)
                });
                cells.push(cell(c, m, "rel_se_bias_pct", name, &g, se_bias, None));

                let covered: Vec<f64> = g
                    .ok
                    .iter()
                    .filter_map(|r| match (r.lower, r.upper, r.truth) {
                        (Some(l), Some(u), Some(t)) => Some(if l <= t && t <= u { 1.0 } else { 0.0 }),
                        _ => None,
                    })
                    .collect();
                let coverage = (enough && covered.len() == k).then(|| {
                    let p = mean(&covered);
                    (p, (p * (1.0 - p) / k as f64).sqrt())
                });
                cells.push(cell(c, m, "coverage", name, &g, coverage, None));
            }
        }
    }
    cells
}
