//! Cluster-level consistency alignment for join-as-one synthetic data:
//! quantile matching for numeric parent columns and a one-category-per-cluster
//! assignment for categorical ones.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_tables, Column, ColumnData, FlatTable, MultilevelDataset};
use crate::error::{Error, Result};
use crate::fidelity::{aligned_codes, ksc, tvc};
use crate::seed::{derive_seed, rng_from};

pub const CONFIDENCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 32;
/// Largest search space, in bits, that exhaustive enumeration accepts.
pub const EXHAUSTIVE_BITS: f64 = 24.0;
const IMPROVEMENT: f64 = 1e-12;

/// Right-continuous empirical inverse CDF of sorted values.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).floor() as usize).min(n - 1);
    sorted[idx]
}

/// Maps cluster medians onto real cluster-level values by rank: the cluster
/// of rank m (1-based, ties by position) receives the real quantile at
/// (m - 0.5) / J.
pub fn quantile_match(medians: &[f64], real: &[f64]) -> Result<Vec<f64>> {
    if real.is_empty() {
        return Err(Error::invalid("quantile matching: no real cluster values"));
    }
    let mut sorted = real.to_vec();
    sorted.sort_by(f64::total_cmp);
    let j = medians.len();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| medians[a].total_cmp(&medians[b]));
    let mut out = vec![0.0; j];
    for (rank, &c) in order.iter().enumerate() {
        out[c] = empirical_quantile(&sorted, (rank as f64 + 0.5) / j as f64);
    }
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalAssignmentProblem {
    pub sizes: Vec<usize>,
    /// Within-cluster synthetic proportions, one row per cluster.
    pub confidence: Vec<Vec<f64>>,
    pub p_star: Vec<f64>,
    pub t_star: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    /// Student marginal deviation.
    pub a: f64,
    /// Cluster count deviation.
    pub b: f64,
    /// Confidence cost.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub categories: Vec<usize>,
    pub objective: f64,
    pub terms: Terms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Exhaustive,
    LocalSearch { restarts: usize },
    /// Exhaustive when within the size guard, local search otherwise.
    Auto { restarts: usize },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Auto {
            restarts: DEFAULT_RESTARTS,
        }
    }
}

struct State<'a> {
    p: &'a CategoricalAssignmentProblem,
    cost: &'a [Vec<f64>],
    n_total: f64,
    mass: Vec<usize>,
    count: Vec<usize>,
    assign: Vec<usize>,
}

impl<'a> State<'a> {
    fn new(p: &'a CategoricalAssignmentProblem, cost: &'a [Vec<f64>], assign: Vec<usize>) -> Self {
        let k = p.p_star.len();
        let mut mass = vec![0; k];
        let mut count = vec![0; k];
        for (j, &c) in assign.iter().enumerate() {
            mass[c] += p.sizes[j];
            count[c] += 1;
        }
        Self {
            p,
            cost,
            n_total: p.sizes.iter().sum::<usize>() as f64,
            mass,
            count,
            assign,
        }
    }

    fn a_term(&self, k: usize, mass: usize) -> f64 {
        (mass as f64 / self.n_total - self.p.p_star[k]).abs()
    }

    fn b_term(&self, k: usize, count: usize) -> f64 {
        (count as f64 - self.p.t_star[k]).abs()
    }

    /// Objective change from moving cluster `j` to category `to`.
    fn delta(&self, j: usize, to: usize) -> f64 {
        let from = self.assign[j];
        let n = self.p.sizes[j];
        let da = self.a_term(from, self.mass[from] - n) - self.a_term(from, self.mass[from])
            + self.a_term(to, self.mass[to] + n)
            - self.a_term(to, self.mass[to]);
        let db = self.b_term(from, self.count[from] - 1) - self.b_term(from, self.count[from])
            + self.b_term(to, self.count[to] + 1)
            - self.b_term(to, self.count[to]);
        let dc = self.cost[j][to] - self.cost[j][from];
        self.p.alpha * da + self.p.beta * db + self.p.gamma * dc
    }

    fn apply(&mut self, j: usize, to: usize) {
        let from = self.assign[j];
        let n = self.p.sizes[j];
        self.mass[from] -= n;
        self.count[from] -= 1;
        self.mass[to] += n;
        self.count[to] += 1;
        self.assign[j] = to;
    }

    fn descend(&mut self) {
        let k = self.p.p_star.len();
        loop {
            let mut best = (-IMPROVEMENT, usize::MAX, 0);
            for j in 0..self.assign.len() {
                for to in 0..k {
                    if to != self.assign[j] {
                        let d = self.delta(j, to);
                        if d < best.0 {
                            best = (d, j, to);
                        }
                    }
                }
            }
            if best.1 == usize::MAX {
                break;
            }
            self.apply(best.1, best.2);
        }
    }
}

impl CategoricalAssignmentProblem {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_categories(&self) -> usize {
        self.p_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (j, k) = (self.n_clusters(), self.n_categories());
        if j == 0 || k == 0 {
            return Err(Error::invalid("assignment problem needs clusters and categories"));
        }
        if self.t_star.len() != k || self.confidence.len() != j || self.confidence.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("assignment problem dimensions disagree"));
        }
        for w in [self.alpha, self.beta, self.gamma] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("assignment weights must be finite and non-negative"));
            }
        }
        if self.sizes.iter().sum::<usize>() == 0 {
            return Err(Error::invalid("assignment problem has no children"));
        }
        Ok(())
    }

    fn costs(&self) -> Vec<Vec<f64>> {
        self.confidence
            .iter()
            .map(|r| r.iter().map(|&p| -p.max(CONFIDENCE_FLOOR).ln()).collect())
            .collect()
    }

    pub fn terms(&self, categories: &[usize]) -> Terms {
        let k = self.n_categories();
        let n_total = self.sizes.iter().sum::<usize>() as f64;
        let mut mass = vec![0usize; k];
        let mut count = vec![0usize; k];
        let mut c = 0.0;
        for (j, &cat) in categories.iter().enumerate() {
            mass[cat] += self.sizes[j];
            count[cat] += 1;
            c -= self.confidence[j][cat].max(CONFIDENCE_FLOOR).ln();
        }
        Terms {
            a: (0..k).map(|i| (mass[i] as f64 / n_total - self.p_star[i]).abs()).sum(),
            b: (0..k).map(|i| (count[i] as f64 - self.t_star[i]).abs()).sum(),
            c,
        }
    }

    pub fn objective(&self, categories: &[usize]) -> f64 {
        let t = self.terms(categories);
        self.alpha * t.a + self.beta * t.b + self.gamma * t.c
    }

    fn assignment(&self, categories: Vec<usize>) -> Assignment {
        let terms = self.terms(&categories);
        Assignment {
            objective: self.alpha * terms.a + self.beta * terms.b + self.gamma * terms.c,
            terms,
            categories,
        }
    }

    pub fn search_bits(&self) -> f64 {
        self.n_clusters() as f64 * (self.n_categories() as f64).log2()
    }

    /// Global optimum by enumeration; the first optimum in lexicographic order wins.
    pub fn solve_exhaustive(&self) -> Result<Assignment> {
        self.validate()?;
        if self.search_bits() > EXHAUSTIVE_BITS {
            return Err(Error::invalid(format!(
                "exhaustive search over {} clusters and {} categories exceeds the size guard",
                self.n_clusters(),
                self.n_categories()
            )));
        }
        let (j, k) = (self.n_clusters(), self.n_categories());
        let cost = self.costs();
        let mut state = State::new(self, &cost, vec![0; j]);
        let mut best = state.assign.clone();
        let mut best_obj = self.objective(&best);
        let mut current = best_obj;
        loop {
            // Odometer step with the last cluster turning fastest.
            let mut pos = j;
            loop {
                if pos == 0 {
                    return Ok(self.assignment(best));
                }
                pos -= 1;
                let next = (state.assign[pos] + 1) % k;
                current += state.delta(pos, next);
                state.apply(pos, next);
                if next != 0 {
                    break;
                }
            }
            if current < best_obj - IMPROVEMENT {
                best_obj = current;
                best.clone_from(&state.assign);
            }
        }
    }

    fn argmax_start(&self) -> Vec<usize> {
        self.confidence
            .iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Steepest-descent single-cluster moves from the argmax-confidence start
    /// and `restarts - 1` random starts; the lowest objective wins, ties by
    /// restart index.
    pub fn solve_local(&self, restarts: usize, seed: u64) -> Result<Assignment> {
        self.validate()?;
        let cost = self.costs();
        let (j, k) = (self.n_clusters(), self.n_categories());
        let runs: Vec<Vec<usize>> = (0..restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let start = if r == 0 {
                    self.argmax_start()
                } else {
                    let mut rng = rng_from(derive_seed(seed, 0, r as u64, "clca-restart"));
                    (0..j).map(|_| rng.random_range(0..k)).collect()
                };
                let mut s = State::new(self, &cost, start);
                s.descend();
                s.assign
            })
            .collect();
        let mut best: Option<Assignment> = None;
        for a in runs {
            let cand = self.assignment(a);
            if best.as_ref().is_none_or(|b| cand.objective < b.objective - IMPROVEMENT) {
                best = Some(cand);
            }
        }
        Ok(best.expect("at least one restart"))
    }

    pub fn solve(&self, strategy: Strategy, seed: u64) -> Result<Assignment> {
        if self.n_categories() == 1 {
            self.validate()?;
            return Ok(self.assignment(vec![0; self.n_clusters()]));
        }
        match strategy {
            Strategy::Exhaustive => self.solve_exhaustive(),
            Strategy::LocalSearch { restarts } => self.solve_local(restarts, seed),
            Strategy::Auto { restarts } => {
                if self.search_bits() <= EXHAUSTIVE_BITS {
                    self.solve_exhaustive()
                } else {
                    self.solve_local(restarts, seed)
                }
            }
        }
    }
}

/// Rounds `weights` scaled to sum to `total`, handing leftovers to the
/// largest remainders (ties to the lower index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(left) {
        out[i] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClcaOptions {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub strategy: Strategy,
}

impl Default for ClcaOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            strategy: Strategy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnAudit {
    pub column: String,
    /// Clusters whose rows disagreed before alignment.
    pub inconsistent_clusters: usize,
    /// Similarity of cluster-level values to the real ones before and after.
    pub before: f64,
    pub after: f64,
    pub assignment: Option<Assignment>,
    /// Set when real cluster counts were rescaled to the synthetic cluster count.
    pub counts_rescaled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClcaAudit {
    pub clusters: usize,
    pub real_clusters: usize,
    pub columns: Vec<ColumnAudit>,
}

fn inconsistent(col: &Column, groups: &[Vec<usize>]) -> usize {
    groups
        .iter()
        .filter(|rows| match &col.data {
            ColumnData::Numeric(v) => rows.iter().any(|&r| v[r] != v[rows[0]]),
            ColumnData::Categorical(v) => rows.iter().any(|&r| v[r] != v[rows[0]]),
        })
        .count()
}

fn broadcast(n_rows: usize, groups: &[Vec<usize>], per_cluster: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_rows];
    for (g, rows) in groups.iter().enumerate() {
        for &r in rows {
            out[r] = per_cluster[g];
        }
    }
    out
}

/// Quantile matching of one numeric parent column.
pub fn clca_numeric(flat: &FlatTable, real: &MultilevelDataset, column: &str) -> Result<(FlatTable, ColumnAudit)> {
    let col = flat
        .parent_columns()
        .iter()
        .find(|c| c.name() == column)
        .ok_or_else(|| Error::UnknownColumn {
            table: flat.schema().parent.name.clone(),
            column: column.to_string(),
        })?;
    let values = col
        .as_numeric()
        .ok_or_else(|| Error::invalid(format!("`{column}` is not numeric")))?;
    let real_values = real
        .parent_column(column)
        .and_then(Column::as_numeric)
        .ok_or_else(|| Error::invalid(format!("real data has no numeric `{column}`")))?;
    let groups: Vec<Vec<usize>> = flat.clusters().into_values().collect();
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::invalid("quantile matching: empty cluster"));
    }
    let medians: Vec<f64> = groups
        .iter()
        .map(|rows| median(&mut rows.iter().map(|&r| values[r]).collect::<Vec<_>>()))
        .collect();
    let mapped = quantile_match(&medians, real_values)?;
    let audit = ColumnAudit {
        column: column.to_string(),
        inconsistent_clusters: inconsistent(col, &groups),
        before: ksc(real_values, &medians)?.value,
        after: ksc(real_values, &mapped)?.value,
        assignment: None,
        counts_rescaled: false,
    };
    let out = flat.with_parent_column(Column::numeric(column, broadcast(flat.n_rows(), &groups, &mapped)))?;
    Ok((out, audit))
}

/// Builds the assignment problem for one categorical parent column.
pub fn categorical_problem(
    flat: &FlatTable,
    real: &MultilevelDataset,
    column: &str,
    opts: &ClcaOptions,
) -> Result<(CategoricalAssignmentProblem, Vec<String>, bool)> {
    let synth_col = flat
        .parent_columns()
        .iter()
        .find(|c| c.name() == column)
        .filter(|c| c.as_codes().is_some())
        .ok_or_else(|| Error::invalid(format!("`{column}` is not a categorical parent column")))?;
    let real_parent = real
        .parent_column(column)
        .filter(|c| c.as_codes().is_some())
        .ok_or_else(|| Error::invalid(format!("real data has no categorical `{column}`")))?;
    let (_, real_children) = real.parent_column_on_children(column)?;
    let mut labels: Vec<String> = real_parent.categories().iter().chain(synth_col.categories()).cloned().collect();
    labels.sort();
    labels.dedup();
    let k = labels.len();
    let recode = |c: &Column| -> Vec<u32> {
        let map: Vec<u32> = c.categories().iter().map(|l| labels.binary_search(l).unwrap() as u32).collect();
        c.as_codes().unwrap().iter().map(|&v| map[v as usize]).collect()
    };
    let synth_codes = recode(synth_col);
    let groups: Vec<Vec<usize>> = flat.clusters().into_values().collect();
    let confidence: Vec<Vec<f64>> = groups
        .iter()
        .map(|rows| {
            let mut p = vec![0.0; k];
            for &r in rows {
                p[synth_codes[r] as usize] += 1.0;
            }
            p.iter().map(|v| v / rows.len() as f64).collect()
        })
        .collect();
    let mut p_star = vec![0.0; k];
    let rc = recode(&real_children);
    for &c in &rc {
        p_star[c as usize] += 1.0 / rc.len().max(1) as f64;
    }
    let mut t_real = vec![0.0; k];
    for &c in &recode(real_parent) {
        t_real[c as usize] += 1.0;
    }
    let (j_synth, j_real) = (groups.len(), real.n_clusters());
    let rescaled = j_synth != j_real;
    let t_star = if rescaled {
        largest_remainder(&t_real, j_synth).into_iter().map(|v| v as f64).collect()
    } else {
        t_real
    };
    let problem = CategoricalAssignmentProblem {
        sizes: groups.iter().map(Vec::len).collect(),
        confidence,
        p_star,
        t_star,
        alpha: opts.alpha,
        beta: opts.beta,
        gamma: opts.gamma,
    };
    Ok((problem, labels, rescaled))
}

/// Constrained assignment of one categorical parent column.
pub fn clca_categorical(
    flat: &FlatTable,
    real: &MultilevelDataset,
    column: &str,
    opts: &ClcaOptions,
    seed: u64,
) -> Result<(FlatTable, ColumnAudit)> {
    let (problem, labels, rescaled) = categorical_problem(flat, real, column, opts)?;
    let assignment = problem.solve(opts.strategy, seed)?;
    let groups: Vec<Vec<usize>> = flat.clusters().into_values().collect();
    let mut codes = vec![0u32; flat.n_rows()];
    for (g, rows) in groups.iter().enumerate() {
        for &r in rows {
            codes[r] = assignment.categories[g] as u32;
        }
    }
    let synth_col = flat.parent_columns().iter().find(|c| c.name() == column).unwrap();
    let real_parent = real.parent_column(column).unwrap();
    let majority: Vec<u32> = problem
        .confidence
        .iter()
        .map(|p| (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b }) as u32)
        .collect();
    let assigned: Vec<u32> = assignment.categories.iter().map(|&c| c as u32).collect();
    let as_col = |c: Vec<u32>| Column::categorical(column, labels.clone(), c);
    let (rb, sb) = aligned_codes(real_parent, &as_col(majority));
    let (ra, sa) = aligned_codes(real_parent, &as_col(assigned));
    let audit = ColumnAudit {
        column: column.to_string(),
        inconsistent_clusters: inconsistent(synth_col, &groups),
        before: tvc(&rb, &sb)?.value,
        after: tvc(&ra, &sa)?.value,
        assignment: Some(assignment),
        counts_rescaled: rescaled,
    };
    let out = flat.with_parent_column(as_col(codes))?;
    Ok((out, audit))
}

/// Aligns every parent column and splits the result into consistent tables.
pub fn clca_apply(
    flat: &FlatTable,
    real: &MultilevelDataset,
    opts: &ClcaOptions,
    seed: u64,
) -> Result<(MultilevelDataset, ClcaAudit)> {
    let mut current = flat.clone();
    let mut columns = Vec::new();
    let names: Vec<String> = flat.parent_columns().iter().map(|c| c.name().to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let is_numeric = current.parent_columns()[i].as_numeric().is_some();
        let (next, audit) = if is_numeric {
            clca_numeric(&current, real, name)?
        } else {
            clca_categorical(&current, real, name, opts, derive_seed(seed, i as u64, 0, "clca"))?
        };
        current = next;
        columns.push(audit);
    }
    let dataset = split_tables(&current)?;
    Ok((
        dataset,
        ClcaAudit {
            clusters: current.clusters().len(),
            real_clusters: real.n_clusters(),
            columns,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::{Strategy, *};
    use crate::data::{join_as_one, Table};
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_match(&[10.0, 30.0, 20.0], &[300.0, 100.0, 200.0]).unwrap(), vec![100.0, 300.0, 200.0]);
        assert_eq!(quantile_match(&[5.0], &[1.0, 2.0, 9.0]).unwrap(), vec![2.0]);
        // Ties keep input order.
        assert_eq!(quantile_match(&[1.0, 1.0], &[4.0, 3.0]).unwrap(), vec![3.0, 4.0]);
        assert!(quantile_match(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn quantile_match_is_monotone_and_in_range(
            medians in prop::collection::vec(-100.0f64..100.0, 1..30),
            real in prop::collection::vec(-50.0f64..50.0, 1..30),
        ) {
            let out = quantile_match(&medians, &real).unwrap();
            let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for a in 0..medians.len() {
                prop_assert!(out[a] >= lo && out[a] <= hi);
                prop_assert!(real.contains(&out[a]));
                for b in 0..medians.len() {
                    if medians[a] < medians[b] {
                        prop_assert!(out[a] <= out[b]);
                    }
                }
            }
        }
    }

    fn worked_example() -> CategoricalAssignmentProblem {
        CategoricalAssignmentProblem {
            sizes: vec![1, 1],
            confidence: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            p_star: vec![0.5, 0.5],
            t_star: vec![1.0, 1.0],
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }

    #[test]
    fn two_school_example() {
        let p = worked_example();
        for a in [p.solve_exhaustive().unwrap(), p.solve_local(4, 1).unwrap()] {
            assert_eq!(a.categories, vec![0, 1]);
            assert_eq!(a.terms.a, 0.0);
            assert_eq!(a.terms.b, 0.0);
            assert!((a.terms.c - (-(0.9f64).ln() - (0.8f64).ln())).abs() < 1e-12);
            assert!((a.objective - 0.3285).abs() < 1e-4);
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng, j: usize, k: usize) -> CategoricalAssignmentProblem {
        let sizes: Vec<usize> = (0..j).map(|_| rng.random_range(1..15)).collect();
        let confidence = (0..j)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1e-12);
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        let t = largest_remainder(&w, j + rng.random_range(0..3));
        CategoricalAssignmentProblem {
            sizes,
            confidence,
            p_star: w.iter().map(|v| v / s).collect(),
            t_star: t.into_iter().map(|v| v as f64).collect(),
            alpha: 1.0,
            beta: 1.0,
            gamma: if rng.random_bool(0.2) { 0.0 } else { 1.0 },
        }
    }

    /// Plain recursive enumeration, independent of the odometer.
    fn brute_force(p: &CategoricalAssignmentProblem) -> f64 {
        fn go(p: &CategoricalAssignmentProblem, cur: &mut Vec<usize>, best: &mut f64) {
            if cur.len() == p.n_clusters() {
                *best = best.min(p.objective(cur));
                return;
            }
            for k in 0..p.n_categories() {
                cur.push(k);
                go(p, cur, best);
                cur.pop();
            }
        }
        let mut best = f64::INFINITY;
        go(p, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn exhaustive_matches_brute_force_and_local_search_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..40 {
            let k = rng.random_range(2..5);
            let j = rng.random_range(1..7);
            let p = random_problem(&mut rng, j, k);
            let ex = p.solve_exhaustive().unwrap();
            assert!((ex.objective - brute_force(&p)).abs() < 1e-9, "instance {i}");
            let t = ex.terms;
            assert!((p.alpha * t.a + p.beta * t.b + p.gamma * t.c - ex.objective).abs() < 1e-12);
            let ls = p.solve_local(DEFAULT_RESTARTS, i).unwrap();
            assert!(ls.objective >= ex.objective - 1e-9);
            assert!(ls.objective <= p.objective(&p.argmax_start()) + 1e-12);
        }
    }

    #[test]
    fn guard_and_single_category() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big = random_problem(&mut rng, 30, 3);
        assert!(big.solve_exhaustive().is_err());
        assert_eq!(big.solve_local(3, 0).unwrap(), big.solve_local(3, 0).unwrap());
        let one = CategoricalAssignmentProblem {
            sizes: vec![2, 3],
            confidence: vec![vec![1.0], vec![1.0]],
            p_star: vec![1.0],
            t_star: vec![2.0],
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        assert_eq!(one.solve(Strategy::default(), 0).unwrap().categories, vec![0, 0]);
        let mut bad = worked_example();
        bad.alpha = -1.0;
        assert!(bad.solve_exhaustive().is_err());
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(&[3.0, 1.0], 2), vec![2, 0]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[5.0, 3.0, 2.0], 5).iter().sum::<usize>(), 5);
    }

    fn real_and_messy() -> (MultilevelDataset, FlatTable) {
        let real = MultilevelDataset::from_tables(
            Table::new(
                "school",
                vec!["A".into(), "B".into(), "C".into()],
                vec![
                    Column::numeric("climate", vec![100.0, 200.0, 300.0]),
                    Column::from_labels("locale", &["city", "rural", "city"]),
                ],
            ),
            "school_id",
            Table::new(
                "student",
                (0..6).map(|i| format!("r{i}")).collect(),
                vec![Column::numeric("ses", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
            ),
            "student_id",
            "school_id",
            ["A", "A", "B", "B", "C", "C"].map(String::from).to_vec(),
        )
        .unwrap();
        let flat_real = join_as_one(&real).unwrap();
        let messy_flat = FlatTable::new(
            flat_real.schema().clone(),
            (0..7).map(|i| format!("s{i}")).collect(),
            ["X", "X", "Y", "Y", "Y", "Z", "Z"].map(String::from).to_vec(),
            vec![Column::numeric("ses", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])],
            vec![
                Column::numeric("climate", vec![9.0, 11.0, 31.0, 29.0, 30.0, 20.0, 20.0]),
                Column::from_labels("locale", &["city", "rural", "rural", "rural", "city", "city", "city"]),
            ],
        )
        .unwrap();
        (real, messy_flat)
    }

    #[test]
    fn apply_restores_consistency_and_matches_real_marginals() {
        let (real, messy) = real_and_messy();
        assert!(split_tables(&messy).is_err());
        let (fixed, audit) = clca_apply(&messy, &real, &ClcaOptions::default(), 5).unwrap();
        assert_eq!(fixed.n_clusters(), 3);
        // Medians X=10, Y=30, Z=20 map onto 100, 300, 200.
        assert_eq!(fixed.parent_column("climate").unwrap().as_numeric().unwrap(), &[100.0, 300.0, 200.0]);
        let climate = &audit.columns[0];
        assert_eq!(climate.after, 1.0);
        assert_eq!(climate.inconsistent_clusters, 2);
        let locale = audit.columns[1].assignment.as_ref().unwrap();
        let counts = locale.categories.iter().filter(|&&c| c == 0).count();
        assert_eq!(counts, 2);
        assert!(!audit.columns[1].counts_rescaled);
        let flat = join_as_one(&fixed).unwrap();
        assert!(split_tables(&flat).is_ok());
    }
}
