use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{Holdout, PredictiveConfig, PredictiveMethod, RecoveryConfig, Source, Study, StudyKind, TruthSpec};
use super::summary::{summarize_predictive, summarize_recovery, ReplicationRecord, ResultKind, StudyResult};
use crate::data::MultilevelDataset;
use crate::error::{Error, Result};
use crate::frame::ModelFrame;
use crate::generators::{learn_true_parameters, omitted_columns, regenerate_outcome, OutcomeModelSpec};
use crate::seed::{derive_seed, stream};
use crate::stats::{fit_lmm, fit_ols, fit_ols_fe, LmmOptions, PredictionRule, WaldInterval};

pub const WORKERS_ENV: &str = "MLSYNTH_WORKERS";

/// Worker count from the environment, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub result: StudyResult,
    pub log: Vec<ReplicationRecord>,
    /// Outcome model used as ground truth (recovery studies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<OutcomeModelSpec>,
}

/// Rows held out for prediction, in ascending order.
pub fn holdout_rows(d: &MultilevelDataset, rule: Holdout, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, 0, 0, "holdout");
    let mut out = Vec::new();
    for members in d.members() {
        let n = members.len();
        if n < 2 {
            continue;
        }
        match rule {
            Holdout::OnePerCluster => out.push(*members.choose(&mut rng).expect("non-empty")),
            Holdout::Fraction { fraction } => {
                let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
                out.extend(members.choose_multiple(&mut rng, k).copied());
            }
        }
    }
    out.sort_unstable();
    out
}

fn predictive_frame(d: &MultilevelDataset, cfg: &PredictiveConfig) -> Result<ModelFrame> {
    let m = &cfg.model;
    let mut frame = ModelFrame::build(d, &m.outcome, &m.child, &m.parent, false)?;
    for [c, p] in &m.interactions {
        frame.add_interaction(d, c, p)?;
    }
    Ok(frame)
}

fn pmse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, v)| (p - v).powi(2)).sum::<f64>() / y.len() as f64
}

/// PMSE of every rule on one replication.
pub fn predictive_replication(
    d: &MultilevelDataset,
    cfg: &PredictiveConfig,
    holdout_seed: u64,
) -> Result<Vec<(PredictiveMethod, Result<f64>)>> {
    let frame = predictive_frame(d, cfg)?;
    let test_rows = holdout_rows(d, cfg.holdout, holdout_seed);
    if test_rows.is_empty() {
        return Err(Error::invalid("no cluster has two or more children to hold one out"));
    }
    let mut is_test = vec![false; frame.n_rows()];
    test_rows.iter().for_each(|&r| is_test[r] = true);
    let train_rows: Vec<usize> = (0..frame.n_rows()).filter(|&r| !is_test[r]).collect();
    let train = frame.select_rows(&train_rows);
    let test = frame.select_rows(&test_rows);
    let test_clusters: Vec<Option<usize>> = test.cluster.iter().map(|&j| Some(j)).collect();
    let slope = match &cfg.model.random_slope {
        Some(s) => Some(
            frame
                .position(s)
                .ok_or_else(|| Error::invalid(format!("random slope `{s}` is not a model covariate")))?,
        ),
        None => None,
    };

    let needs_lmm = cfg.methods.iter().any(|m| *m != PredictiveMethod::OlsFe);
    let lmm = needs_lmm.then(|| {
        fit_lmm(&train.y, &train.x, &train.names, &train.cluster, train.n_clusters, slope, LmmOptions::default())
    });
    Ok(cfg
        .methods
        .iter()
        .map(|&m| {
            let pred = match m {
                PredictiveMethod::OlsFe => fit_ols_fe(&train.y, &train.x, &train.names, &train.cluster, train.n_clusters, slope)
                    .and_then(|f| f.predict(&test.x, &test_clusters)),
                PredictiveMethod::Prior | PredictiveMethod::Multilevel => {
                    let rule = if m == PredictiveMethod::Prior {
                        PredictionRule::Prior
                    } else {
                        PredictionRule::Multilevel
                    };
                    match lmm.as_ref().expect("fitted when needed") {
                        Ok(fit) => fit.predict(&test.x, &test_clusters, rule),
                        Err(e) => Err(Error::Fit(e.to_string())),
                    }
                }
            };
            (m, pred.map(|p| pmse(&p, &test.y)))
        })
        .collect())
}

fn predictive_records(study: &Study, cfg: &PredictiveConfig, ci: usize, j: usize, r: usize) -> Vec<ReplicationRecord> {
    let seed = study.design.master_seed;
    let outcome = study
        .source
        .draw(j, derive_seed(seed, ci as u64, r as u64, "data"))
        .and_then(|d| predictive_replication(&d, cfg, derive_seed(seed, ci as u64, r as u64, "holdout")));
    match outcome {
        Ok(results) => results
            .into_iter()
            .map(|(m, v)| match v {
                Ok(v) => ReplicationRecord::pmse(j, r, m.name(), v),
                Err(e) => ReplicationRecord::failed(j, r, m.name(), "", e),
            })
            .collect(),
        Err(e) => cfg
            .methods
            .iter()
            .map(|m| ReplicationRecord::failed(j, r, m.name(), "", &e))
            .collect(),
    }
}

/// Estimates, standard errors and intervals of the tracked coefficients for
/// every recovery method on one dataset whose outcome follows `truth`.
pub fn recovery_replication(
    d: &MultilevelDataset,
    truth: &OutcomeModelSpec,
    cfg: &RecoveryConfig,
) -> Vec<(super::design::RecoveryMethod, Result<Vec<Result<WaldInterval>>>)> {
    use super::design::RecoveryMethod as M;
    let mut omitted = omitted_columns(d);
    omitted.extend(cfg.omitted.iter().cloned());
    let keep = |names: Vec<String>| -> Vec<String> { names.into_iter().filter(|n| !omitted.contains(n)).collect() };
    let (child_all, parent_all) = (truth.child_names(), truth.parent_names());
    let (child_obs, parent_obs) = (keep(child_all.clone()), keep(parent_all.clone()));
    cfg.methods
        .iter()
        .map(|&m| {
            let (child, parent) = if m == M::Oracle {
                (&child_all, &parent_all)
            } else {
                (&child_obs, &parent_obs)
            };
            let igm = matches!(m, M::OlsIgm | M::HlmIgm);
            let fitted = ModelFrame::build(d, &truth.outcome, child, parent, igm).and_then(|f| {
                let slope = truth.random_slope.as_ref().and_then(|s| f.position(&s.column));
                let interval = |name: &str| -> Result<WaldInterval> {
                    Err(Error::invalid(format!("`{name}` is not in the model")))
                };
                match m {
                    M::Ols | M::OlsIgm => {
                        let fit = fit_ols(&f.y, &f.x, &f.names)?;
                        Ok(cfg
                            .tracked
                            .iter()
                            .map(|t| if fit.coefficient(t).is_some() { fit.wald_interval(t, cfg.level) } else { interval(t) })
                            .collect())
                    }
                    M::Hlm | M::HlmIgm | M::Oracle => {
                        let fit = fit_lmm(&f.y, &f.x, &f.names, &f.cluster, f.n_clusters, slope, LmmOptions::default())?;
                        Ok(cfg
                            .tracked
                            .iter()
                            .map(|t| if fit.coefficient(t).is_some() { fit.wald_interval(t, cfg.level) } else { interval(t) })
                            .collect())
                    }
                }
            });
            (m, fitted)
        })
        .collect()
}

fn recovery_records(study: &Study, cfg: &RecoveryConfig, truth: &OutcomeModelSpec, ci: usize, j: usize, r: usize) -> Vec<ReplicationRecord> {
    let seed = study.design.master_seed;
    let data = study
        .source
        .draw(j, derive_seed(seed, ci as u64, r as u64, "data"))
        .and_then(|d| regenerate_outcome(&d, truth, derive_seed(seed, ci as u64, r as u64, "outcome")));
    let d = match data {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .flat_map(|m| cfg.tracked.iter().map(move |t| (m, t)))
                .map(|(m, t)| ReplicationRecord::failed(j, r, m.name(), t, &e))
                .collect()
        }
    };
    let mut out = Vec::new();
    for (m, fitted) in recovery_replication(&d, truth, cfg) {
        for (k, t) in cfg.tracked.iter().enumerate() {
            let rec = match &fitted {
                Err(e) => ReplicationRecord::failed(j, r, m.name(), t, e),
                Ok(intervals) => match &intervals[k] {
                    Err(e) => ReplicationRecord::failed(j, r, m.name(), t, e),
                    Ok(w) => ReplicationRecord {
                        condition: j,
                        replication: r,
                        method: m.name().to_string(),
                        coefficient: t.clone(),
                        truth: truth.coefficient(t),
                        estimate: Some(w.estimate),
                        se: Some(w.se),
                        lower: Some(w.lower),
                        upper: Some(w.upper),
                        error: None,
                    },
                },
            };
            out.push(rec);
        }
    }
    out
}

fn resolve_truth(study: &Study, cfg: &RecoveryConfig) -> Result<OutcomeModelSpec> {
    let truth = match &cfg.truth {
        TruthSpec::Given { spec } => spec.clone(),
        TruthSpec::Learned { shape } => {
            let largest = study.design.conditions().into_iter().max().unwrap_or(1);
            let seed = derive_seed(study.design.master_seed, 0, 0, "reference");
            let reference = study.source.reference(largest, seed)?;
            learn_true_parameters(&reference, shape)?
        }
    };
    for t in &cfg.tracked {
        if truth.coefficient(t).is_none() {
            return Err(Error::invalid(format!("tracked coefficient `{t}` is not in the true model")));
        }
    }
    Ok(truth)
}

/// Runs every replication of a study. Each replication depends only on its
/// derived seed and records are reduced in (condition, replication) order,
/// so the output does not depend on the number of workers.
pub fn run_study(study: &Study, workers: Option<usize>) -> Result<StudyOutput> {
    let design = &study.design;
    let conditions = design.conditions();
    let tasks: Vec<(usize, usize, usize)> = conditions
        .iter()
        .enumerate()
        .flat_map(|(ci, &j)| (0..design.replications).map(move |r| (ci, j, r)))
        .collect();
    let (kind, methods, coefficients, truth) = match &design.study {
        StudyKind::Predictive(cfg) => (
            ResultKind::Predictive,
            cfg.methods.iter().map(|m| m.name().to_string()).collect::<Vec<_>>(),
            Vec::new(),
            None,
        ),
        StudyKind::Recovery(cfg) => (
            ResultKind::Recovery,
            cfg.methods.iter().map(|m| m.name().to_string()).collect(),
            cfg.tracked.clone(),
            Some(resolve_truth(study, cfg)?),
        ),
    };
    let chunks: Vec<Vec<ReplicationRecord>> = with_workers(workers, || {
        tasks
            .par_iter()
            .map(|&(ci, j, r)| match &design.study {
                StudyKind::Predictive(cfg) => predictive_records(study, cfg, ci, j, r),
                StudyKind::Recovery(cfg) => recovery_records(study, cfg, truth.as_ref().expect("resolved"), ci, j, r),
            })
            .collect()
    })?;
    let log: Vec<ReplicationRecord> = chunks.into_iter().flatten().collect();
    let cells = match kind {
        ResultKind::Predictive => summarize_predictive(&log, &conditions, &methods),
        ResultKind::Recovery => summarize_recovery(&log, &conditions, &methods, &coefficients),
    };
    Ok(StudyOutput {
        result: StudyResult {
            kind,
            master_seed: design.master_seed,
            replications: design.replications,
            conditions,
            methods,
            coefficients,
            pool_clusters: study.source.pool_clusters(),
            cells,
        },
        log,
        truth,
    })
}

/// Recomputes the summary of a study from its replication log.
pub fn resummarize(result: &StudyResult, log: &[ReplicationRecord]) -> StudyResult {
    let cells = match result.kind {
        ResultKind::Predictive => summarize_predictive(log, &result.conditions, &result.methods),
        ResultKind::Recovery => summarize_recovery(log, &result.conditions, &result.methods, &result.coefficients),
    };
    StudyResult {
        cells,
        ..result.clone()
    }
}

/// Convenience for sources that need no files.
pub fn run_design(design: &super::design::StudyDesign, source: Source, workers: Option<usize>) -> Result<StudyOutput> {
    run_study(&Study::new(design.clone(), source)?, workers)
}
