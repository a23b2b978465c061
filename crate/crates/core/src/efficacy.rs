//! Machine-learning efficacy: train-on-synthetic versus train-on-real, both
//! tested on held-out real clusters.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnData, MultilevelDataset};
use crate::error::{Error, Result};
use crate::fidelity::{aligned_codes, mean, SkippedMetric};
use crate::stats::{fit_lmm, fit_multinomial_logistic, fit_ols, LmmOptions, PredictionRule, DEFAULT_RIDGE};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficacyMetric {
    R2,
    MacroF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Child,
    Parent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyScore {
    pub target: String,
    pub level: Level,
    pub metric: EfficacyMetric,
    pub m_tstr: f64,
    pub m_trtr: f64,
    pub score: f64,
}

/// `clamp(1 - |m_tstr - m_trtr|, 0, 1)`.
pub fn efficacy_value(m_tstr: f64, m_trtr: f64) -> f64 {
    (1.0 - (m_tstr - m_trtr).abs()).clamp(0.0, 1.0)
}

pub fn r_squared(y: &[f64], pred: &[f64]) -> Option<f64> {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    (sst > 0.0).then(|| 1.0 - sse / sst)
}

/// Unweighted mean F1 over classes occurring in the truth or the predictions.
pub fn macro_f1(y: &[u32], pred: &[u32], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&a, &b) in y.iter().zip(pred) {
        if a == b {
            tp[a as usize] += 1;
        } else {
            fp[b as usize] += 1;
            fn_[a as usize] += 1;
        }
    }
    let f1: Vec<f64> = (0..classes)
        .filter(|&k| tp[k] + fp[k] + fn_[k] > 0)
        .map(|k| 2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fn_[k]) as f64)
        .collect();
    mean(f1).unwrap_or(0.0)
}

/// Assigns every cluster with data to one of `folds` folds: a seeded shuffle
/// of cluster indices dealt round-robin. Clusters without rows get `None`.
pub fn cluster_folds(has_rows: &[bool], folds: usize, seed: u64) -> Vec<Option<usize>> {
    let mut ids: Vec<usize> = (0..has_rows.len()).filter(|&j| has_rows[j]).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![None; has_rows.len()];
    for (i, j) in ids.into_iter().enumerate() {
        out[j] = Some(i % folds);
    }
    out
}

#[derive(Clone)]
enum Target {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

/// Model-ready rows of one dataset.
struct Side {
    x: DMatrix<f64>,
    target: Target,
    group: Vec<usize>,
    n_groups: usize,
}

impl Side {
    fn rows(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.group.len()).filter(|&r| keep(self.group[r])).collect()
    }
}

/// Encodes real and synthetic predictor columns on a shared layout:
/// numerics as-is, categoricals as dummies for every non-first category
/// of the label union.
fn encode_pair(real: &Column, synth: &Column) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>)> {
    match (&real.data, &synth.data) {
        (ColumnData::Numeric(a), ColumnData::Numeric(b)) => Ok((vec![a.clone()], vec![b.clone()], vec![real.name().to_string()])),
        (ColumnData::Categorical(_), ColumnData::Categorical(_)) => {
            let (a, b) = aligned_codes(real, synth);
            let k = a.iter().chain(&b).max().map_or(0, |m| *m as usize + 1);
            let dummies = |codes: &[u32]| -> Vec<Vec<f64>> {
                (1..k).map(|c| codes.iter().map(|&v| (v as usize == c) as u8 as f64).collect()).collect()
            };
            let names = (1..k).map(|c| format!("{}={c}", real.name())).collect();
            Ok((dummies(&a), dummies(&b), names))
        }
        _ => Err(Error::invalid(format!("column `{}` differs in kind", real.name()))),
    }
}

fn group_means(values: &[f64], group: &[usize], n_groups: usize) -> Vec<f64> {
    let mut s = vec![0.0; n_groups];
    let mut n = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(group) {
        s[g] += v;
        n[g] += 1;
    }
    s.iter().zip(&n).map(|(a, &b)| if b == 0 { 0.0 } else { a / b as f64 }).collect()
}

fn matrix(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r])
}

fn target_pair(real: &Column, synth: &Column) -> Result<(Target, Target, usize)> {
    match (&real.data, &synth.data) {
        (ColumnData::Numeric(a), ColumnData::Numeric(b)) => Ok((Target::Numeric(a.clone()), Target::Numeric(b.clone()), 0)),
        (ColumnData::Categorical(_), ColumnData::Categorical(_)) => {
            let (a, b) = aligned_codes(real, synth);
            let k = a.iter().chain(&b).max().map_or(0, |m| *m as usize + 1);
            Ok((Target::Categorical(a), Target::Categorical(b), k))
        }
        _ => Err(Error::invalid(format!("target `{}` differs in kind", real.name()))),
    }
}

fn select_target(t: &Target, rows: &[usize]) -> Target {
    match t {
        Target::Numeric(v) => Target::Numeric(rows.iter().map(|&r| v[r]).collect()),
        Target::Categorical(v) => Target::Categorical(rows.iter().map(|&r| v[r]).collect()),
    }
}

fn linked_rows(d: &MultilevelDataset) -> (Vec<usize>, Vec<usize>) {
    d.child_clusters()
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|p| (r, p)))
        .unzip()
}

fn child_sides(real: &MultilevelDataset, synth: &MultilevelDataset, target: &str) -> Result<(Side, Side, usize)> {
    let (rr, rg) = linked_rows(real);
    let (sr, sg) = linked_rows(synth);
    let tr = real.child_column(target).ok_or_else(|| unknown(real, target))?;
    let ts = synth.child_column(target).ok_or_else(|| unknown(synth, target))?;
    let (t_real, t_synth, classes) = target_pair(&tr.select(&rr), &ts.select(&sr))?;
    let mut xr = Vec::new();
    let mut xs = Vec::new();
    let mut numeric_idx = Vec::new();
    for name in real.child_column_names().iter().filter(|n| *n != target) {
        let a = real.child_column(name).unwrap().select(&rr);
        let b = synth.child_column(name).ok_or_else(|| unknown(synth, name))?.select(&sr);
        if a.as_numeric().is_some() {
            numeric_idx.push(xr.len());
        }
        let (ea, eb, _) = encode_pair(&a, &b)?;
        xr.extend(ea);
        xs.extend(eb);
    }
    for name in real.parent_column_names() {
        let a = real.parent_column_on_children(&name)?.1;
        let b = synth.parent_column_on_children(&name)?.1;
        let (ea, eb, _) = encode_pair(&a, &b)?;
        xr.extend(ea);
        xs.extend(eb);
    }
    if classes > 0 {
        for &i in &numeric_idx {
            let (a, b) = (&xr[i], &xs[i]);
            let ma = group_means(a, &rg, real.n_clusters());
            let mb = group_means(b, &sg, synth.n_clusters());
            xr.push(rg.iter().map(|&g| ma[g]).collect());
            xs.push(sg.iter().map(|&g| mb[g]).collect());
        }
    }
    Ok((
        Side {
            x: matrix(&xr, rr.len()),
            target: t_real,
            group: rg,
            n_groups: real.n_clusters(),
        },
        Side {
            x: matrix(&xs, sr.len()),
            target: t_synth,
            group: sg,
            n_groups: synth.n_clusters(),
        },
        classes,
    ))
}

fn parent_sides(real: &MultilevelDataset, synth: &MultilevelDataset, target: &str) -> Result<(Side, Side, usize)> {
    let with_children = |d: &MultilevelDataset| -> Vec<usize> {
        d.cluster_sizes().iter().enumerate().filter(|(_, &n)| n > 0).map(|(j, _)| j).collect()
    };
    let (pr, ps) = (with_children(real), with_children(synth));
    let tr = real.parent_column(target).ok_or_else(|| unknown(real, target))?;
    let ts = synth.parent_column(target).ok_or_else(|| unknown(synth, target))?;
    let (t_real, t_synth, classes) = target_pair(&tr.select(&pr), &ts.select(&ps))?;
    let mut xr = Vec::new();
    let mut xs = Vec::new();
    for name in real.parent_column_names().iter().filter(|n| *n != target) {
        let a = real.parent_column(name).unwrap().select(&pr);
        let b = synth.parent_column(name).ok_or_else(|| unknown(synth, name))?.select(&ps);
        let (ea, eb, _) = encode_pair(&a, &b)?;
        xr.extend(ea);
        xs.extend(eb);
    }
    let (rr, rg) = linked_rows(real);
    let (sr, sg) = linked_rows(synth);
    for name in real.child_column_names() {
        let a = real.child_column(&name).unwrap().select(&rr);
        let b = synth.child_column(&name).ok_or_else(|| unknown(synth, &name))?.select(&sr);
        let (ea, eb, _) = encode_pair(&a, &b)?;
        // Numerics become cluster means, dummies become cluster proportions.
        for (ca, cb) in ea.into_iter().zip(eb) {
            let ma = group_means(&ca, &rg, real.n_clusters());
            let mb = group_means(&cb, &sg, synth.n_clusters());
            xr.push(pr.iter().map(|&j| ma[j]).collect());
            xs.push(ps.iter().map(|&j| mb[j]).collect());
        }
    }
    let side = |x: &[Vec<f64>], t: Target, rows: &[usize], n: usize| Side {
        x: matrix(x, rows.len()),
        target: t,
        group: rows.to_vec(),
        n_groups: n,
    };
    Ok((
        side(&xr, t_real, &pr, real.n_clusters()),
        side(&xs, t_synth, &ps, synth.n_clusters()),
        classes,
    ))
}

fn unknown(d: &MultilevelDataset, column: &str) -> Error {
    Error::UnknownColumn {
        table: format!("{}/{}", d.parent().name, d.child().name),
        column: column.to_string(),
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Trains on `train` rows and predicts `test` rows; weaker models take over
/// when a fit is impossible on the training rows.
fn train_predict(train: &Side, rows: &[usize], test: &Side, test_rows: &[usize], level: Level, classes: usize) -> Result<Target> {
    let x_train = with_intercept(&train.x.select_rows(rows));
    let x_test_raw = test.x.select_rows(test_rows);
    let x_test = with_intercept(&x_test_raw);
    let names: Vec<String> = (0..x_train.ncols()).map(|i| format!("x{i}")).collect();
    match select_target(&train.target, rows) {
        Target::Numeric(y) => {
            let fixed_only = |y: &[f64]| -> Vec<f64> {
                match fit_ols(y, &x_train, &names) {
                    Ok(f) => f.predict(&x_test),
                    Err(_) => vec![y.iter().sum::<f64>() / y.len() as f64; test_rows.len()],
                }
            };
            let pred = match level {
                Level::Child => {
                    let group: Vec<usize> = rows.iter().map(|&r| train.group[r]).collect();
                    match fit_lmm(&y, &x_train, &names, &group, train.n_groups, None, LmmOptions::default()) {
                        Ok(f) => f.predict(&x_test, &vec![None; test_rows.len()], PredictionRule::Prior)?,
                        Err(_) => fixed_only(&y),
                    }
                }
                Level::Parent => fixed_only(&y),
            };
            Ok(Target::Numeric(pred))
        }
        Target::Categorical(y) => {
            let xt = train.x.select_rows(rows);
            let pred = match fit_multinomial_logistic(&xt, &y, classes, DEFAULT_RIDGE) {
                Ok(m) => m.predict(&x_test_raw),
                Err(_) => {
                    let mut counts = vec![0usize; classes];
                    for &c in &y {
                        counts[c as usize] += 1;
                    }
                    let best = (0..classes).rev().max_by_key(|&k| counts[k]).unwrap_or(0) as u32;
                    vec![best; test_rows.len()]
                }
            };
            Ok(Target::Categorical(pred))
        }
    }
}

fn score_fold(truth: &Target, pred: &Target, classes: usize) -> Option<f64> {
    match (truth, pred) {
        (Target::Numeric(y), Target::Numeric(p)) => r_squared(y, p),
        (Target::Categorical(y), Target::Categorical(p)) => Some(macro_f1(y, p, classes)),
        _ => None,
    }
}

/// Efficacy of one target column with cluster-wise folds. Synthetic clusters
/// are dealt into folds by the same seeded procedure and TSTR trains on the
/// synthetic clusters outside the held-out fold.
pub fn ml_efficacy(
    real: &MultilevelDataset,
    synth: &MultilevelDataset,
    target: &str,
    folds: usize,
    seed: u64,
) -> Result<EfficacyScore> {
    let level = if real.child_column(target).is_some() {
        Level::Child
    } else if real.parent_column(target).is_some() {
        Level::Parent
    } else {
        return Err(unknown(real, target));
    };
    let (r, s, classes) = match level {
        Level::Child => child_sides(real, synth, target)?,
        Level::Parent => parent_sides(real, synth, target)?,
    };
    let constant = match &r.target {
        Target::Numeric(v) => v.iter().all(|x| *x == v[0]),
        Target::Categorical(v) => v.iter().all(|x| *x == v[0]),
    };
    if constant {
        return Err(Error::degenerate(format!("efficacy: target `{target}` is constant")));
    }
    let has = |side: &Side| {
        let mut h = vec![false; side.n_groups];
        for &g in &side.group {
            h[g] = true;
        }
        h
    };
    let (hr, hs) = (has(&r), has(&s));
    if hr.iter().filter(|&&b| b).count() < folds {
        return Err(Error::invalid(format!("efficacy: fewer clusters than {folds} folds")));
    }
    let fr = cluster_folds(&hr, folds, seed);
    let fs = cluster_folds(&hs, folds, seed);
    let per_fold: Vec<Result<Option<(f64, f64)>>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let test = r.rows(|g| fr[g] == Some(f));
            let train_r = r.rows(|g| fr[g] != Some(f));
            let train_s = s.rows(|g| fs[g] != Some(f));
            if test.is_empty() || train_r.is_empty() || train_s.is_empty() {
                return Ok(None);
            }
            let truth = select_target(&r.target, &test);
            let trtr = train_predict(&r, &train_r, &r, &test, level, classes)?;
            let tstr = train_predict(&s, &train_s, &r, &test, level, classes)?;
            Ok(score_fold(&truth, &tstr, classes).zip(score_fold(&truth, &trtr, classes)))
        })
        .collect();
    let mut tstr = Vec::new();
    let mut trtr = Vec::new();
    for res in per_fold {
        if let Some((a, b)) = res? {
            tstr.push(a);
            trtr.push(b);
        }
    }
    let (Some(m_tstr), Some(m_trtr)) = (mean(tstr), mean(trtr)) else {
        return Err(Error::degenerate(format!("efficacy: no fold of `{target}` is scoreable")));
    };
    Ok(EfficacyScore {
        target: target.to_string(),
        level,
        metric: if classes > 0 { EfficacyMetric::MacroF1 } else { EfficacyMetric::R2 },
        m_tstr,
        m_trtr,
        score: efficacy_value(m_tstr, m_trtr),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub child: Vec<EfficacyScore>,
    pub parent: Vec<EfficacyScore>,
    pub skipped: Vec<SkippedMetric>,
    pub child_avg: Option<f64>,
    pub parent_avg: Option<f64>,
    /// Mean of the available level averages.
    pub overall_avg: f64,
}

/// Every child and parent column as a target in turn.
pub fn efficacy_report(real: &MultilevelDataset, synth: &MultilevelDataset, folds: usize, seed: u64) -> Result<EfficacyReport> {
    let targets: Vec<(Level, String)> = real
        .child_column_names()
        .into_iter()
        .map(|c| (Level::Child, c))
        .chain(real.parent_column_names().into_iter().map(|c| (Level::Parent, c)))
        .collect();
    let results: Vec<Result<EfficacyScore>> = targets
        .par_iter()
        .map(|(_, t)| ml_efficacy(real, synth, t, folds, seed))
        .collect();
    let mut child = Vec::new();
    let mut parent = Vec::new();
    let mut skipped = Vec::new();
    for ((level, name), res) in targets.into_iter().zip(results) {
        match res {
            Ok(s) if level == Level::Child => child.push(s),
            Ok(s) => parent.push(s),
            Err(Error::Degenerate(reason)) => skipped.push(SkippedMetric {
                name: format!("efficacy:{name}"),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    let child_avg = mean(child.iter().map(|s| s.score));
    let parent_avg = mean(parent.iter().map(|s| s.score));
    let overall_avg = mean(child_avg.into_iter().chain(parent_avg))
        .ok_or_else(|| Error::degenerate("efficacy: no scoreable column"))?;
    Ok(EfficacyReport {
        child,
        parent,
        skipped,
        child_avg,
        parent_avg,
        overall_avg,
    })
}
