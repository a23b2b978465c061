//! Variance components, intraclass correlation and cluster-mean reliability.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::score::MetricScore;
use crate::data::{Column, ColumnData, MultilevelDataset};
use crate::error::{Error, Result};

/// Level-1 variance of the standard logistic distribution.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VarianceMethod {
    /// One-way ANOVA method of moments.
    Anova,
    /// ANOVA between-variance on 0/1 values with the logistic level-1 variance.
    BinaryLatent,
    /// Unweighted mean over per-category dummy ICCs.
    CategoryMean { categories: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub tau2: f64,
    pub sigma2: f64,
    pub icc: f64,
    pub reliability: f64,
    pub n_bar: f64,
    pub method: VarianceMethod,
}

impl VarianceComponents {
    pub fn from_parts(tau2: f64, sigma2: f64, n_bar: f64, method: VarianceMethod) -> Self {
        let (icc, reliability) = if tau2 <= 0.0 {
            (0.0, 0.0)
        } else {
            (tau2 / (tau2 + sigma2), n_bar * tau2 / (n_bar * tau2 + sigma2))
        };
        Self {
            tau2: tau2.max(0.0),
            sigma2,
            icc,
            reliability,
            n_bar,
            method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneWayAnova {
    pub msb: f64,
    pub msw: f64,
    /// Unbalanced-design size coefficient (N - Σn_j²/N) / (J - 1).
    pub n_tilde: f64,
    pub clusters: usize,
    pub n: usize,
}

impl OneWayAnova {
    pub fn tau2(&self) -> f64 {
        ((self.msb - self.msw) / self.n_tilde).max(0.0)
    }

    pub fn n_bar(&self) -> f64 {
        self.n as f64 / self.clusters as f64
    }
}

/// One-way random-effects ANOVA. `cluster` labels each value's group.
pub fn one_way_anova(values: &[f64], cluster: &[usize]) -> Result<OneWayAnova> {
    if values.len() != cluster.len() {
        return Err(Error::invalid("anova: values and cluster labels differ in length"));
    }
    let mut groups: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&v, &c) in values.iter().zip(cluster) {
        let e = groups.entry(c).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let j = groups.len();
    let n = values.len();
    if j < 2 {
        return Err(Error::invalid("variance components need at least two clusters"));
    }
    if n == j {
        return Err(Error::invalid(
            "variance components undefined when every cluster has one member",
        ));
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let means: BTreeMap<usize, f64> = groups.iter().map(|(&k, &(s, c))| (k, s / c as f64)).collect();
    let ssb: f64 = groups
        .iter()
        .map(|(k, &(_, c))| c as f64 * (means[k] - grand).powi(2))
        .sum();
    let ssw: f64 = values
        .iter()
        .zip(cluster)
        .map(|(v, c)| (v - means[c]).powi(2))
        .sum();
    let nf = n as f64;
    let sum_sq: f64 = groups.values().map(|&(_, c)| (c * c) as f64).sum();
    Ok(OneWayAnova {
        msb: ssb / (j - 1) as f64,
        msw: ssw / (n - j) as f64,
        n_tilde: (nf - sum_sq / nf) / (j - 1) as f64,
        clusters: j,
        n,
    })
}

/// Numeric ANOVA components: σ² = MSW, τ² = max(0, (MSB − MSW)/ñ).
pub fn anova_components(values: &[f64], cluster: &[usize]) -> Result<VarianceComponents> {
    let a = one_way_anova(values, cluster)?;
    let tau2 = a.tau2();
    if tau2 <= 0.0 && a.msw <= 0.0 {
        return Err(Error::degenerate("constant column has no variance to decompose"));
    }
    Ok(VarianceComponents::from_parts(tau2, a.msw, a.n_bar(), VarianceMethod::Anova))
}

fn binary_components(indicator: &[f64], cluster: &[usize]) -> Result<VarianceComponents> {
    let a = one_way_anova(indicator, cluster)?;
    Ok(VarianceComponents::from_parts(
        a.tau2(),
        LOGISTIC_VARIANCE,
        a.n_bar(),
        VarianceMethod::BinaryLatent,
    ))
}

/// Variance components of a child column, dispatched on its type.
pub fn column_components(column: &Column, cluster: &[usize]) -> Result<VarianceComponents> {
    match &column.data {
        ColumnData::Numeric(v) => anova_components(v, cluster),
        ColumnData::Categorical(codes) => {
            let k = column.categories().len();
            let dummy = |cat: u32| -> Vec<f64> { codes.iter().map(|&c| f64::from(u8::from(c == cat))).collect() };
            match k {
                0 | 1 => Err(Error::degenerate(format!(
                    "`{}` has fewer than two categories",
                    column.name()
                ))),
                2 => binary_components(&dummy(1), cluster),
                _ => {
                    let parts = (0..k as u32)
                        .map(|cat| binary_components(&dummy(cat), cluster))
                        .collect::<Result<Vec<_>>>()?;
                    let kf = k as f64;
                    let avg = |f: fn(&VarianceComponents) -> f64| parts.iter().map(f).sum::<f64>() / kf;
                    Ok(VarianceComponents {
                        tau2: avg(|p| p.tau2),
                        sigma2: LOGISTIC_VARIANCE,
                        icc: avg(|p| p.icc),
                        reliability: avg(|p| p.reliability),
                        n_bar: parts[0].n_bar,
                        method: VarianceMethod::CategoryMean { categories: k },
                    })
                }
            }
        }
    }
}

/// Variance components of a child column of a dataset (orphan rows ignored).
pub fn estimate_variance_components(d: &MultilevelDataset, column: &str) -> Result<VarianceComponents> {
    let col = d.child_column(column).ok_or_else(|| Error::UnknownColumn {
        table: d.child().name.clone(),
        column: column.to_string(),
    })?;
    let (rows, cluster): (Vec<usize>, Vec<usize>) = d
        .child_clusters()
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|p| (r, p)))
        .unzip();
    let linked = if rows.len() == d.n_children() {
        col.clone()
    } else {
        Column {
            spec: col.spec.clone(),
            data: col.data.select(&rows),
        }
    };
    column_components(&linked, &cluster)
}

/// `(1 - |ICC_s - ICC_r|)^3`.
pub fn icc_similarity_value(icc_real: f64, icc_synth: f64) -> f64 {
    (1.0 - (icc_synth - icc_real).abs()).powi(3)
}

pub fn reliability_similarity_value(rel_real: f64, rel_synth: f64) -> f64 {
    1.0 - (rel_synth - rel_real).abs()
}

pub fn icc_similarity(real: &MultilevelDataset, synth: &MultilevelDataset, column: &str) -> Result<MetricScore> {
    let r = estimate_variance_components(real, column)?;
    let s = estimate_variance_components(synth, column)?;
    Ok(MetricScore::new("icc", icc_similarity_value(r.icc, s.icc)))
}

/// Each reliability uses its own dataset's mean cluster size.
pub fn reliability_similarity(real: &MultilevelDataset, synth: &MultilevelDataset, column: &str) -> Result<MetricScore> {
    let r = estimate_variance_components(real, column)?;
    let s = estimate_variance_components(synth, column)?;
    Ok(MetricScore::new(
        "reliability",
        reliability_similarity_value(r.reliability, s.reliability),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(sizes: &[usize]) -> Vec<usize> {
        sizes.iter().enumerate().flat_map(|(j, &n)| std::iter::repeat_n(j, n)).collect()
    }

    #[test]
    fn constant_within_clusters_gives_icc_one() {
        let values = [1.0, 1.0, 3.0, 3.0, 3.0, 8.0, 8.0];
        let vc = anova_components(&values, &labels(&[2, 3, 2])).unwrap();
        assert_eq!(vc.sigma2, 0.0);
        assert_eq!(vc.icc, 1.0);
        assert_eq!(vc.reliability, 1.0);
    }

    #[test]
    fn unbalanced_anova_hand_computation() {
        // Clusters {1,3}, {4,6,8}: means 2 and 6, grand mean 4.4.
        let values = [1.0, 3.0, 4.0, 6.0, 8.0];
        let a = one_way_anova(&values, &labels(&[2, 3])).unwrap();
        let ssb = 2.0 * (2.0f64 - 4.4).powi(2) + 3.0 * (6.0f64 - 4.4).powi(2);
        let ssw = 2.0 + 8.0;
        assert!((a.msb - ssb).abs() < 1e-12);
        assert!((a.msw - ssw / 3.0).abs() < 1e-12);
        assert!((a.n_tilde - (5.0 - 13.0 / 5.0)).abs() < 1e-12);
        let vc = anova_components(&values, &labels(&[2, 3])).unwrap();
        assert!((vc.tau2 - (a.msb - a.msw) / a.n_tilde).abs() < 1e-12);
        assert!((vc.n_bar - 2.5).abs() < 1e-15);
    }

    #[test]
    fn truncation_and_zero_tau() {
        // Identical cluster means: MSB = 0 < MSW.
        let values = [0.0, 2.0, 2.0, 0.0];
        let vc = anova_components(&values, &labels(&[2, 2])).unwrap();
        assert_eq!(vc.tau2, 0.0);
        assert_eq!(vc.icc, 0.0);
        assert_eq!(vc.reliability, 0.0);
    }

    #[test]
    fn binary_formula() {
        let vc = VarianceComponents::from_parts(0.5, LOGISTIC_VARIANCE, 10.0, VarianceMethod::BinaryLatent);
        assert!((vc.icc - 0.1320).abs() < 1e-4);
        assert!((vc.icc - 0.5 / (0.5 + PI * PI / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn icc_similarity_values() {
        assert_eq!(icc_similarity_value(0.2, 0.2), 1.0);
        assert!((icc_similarity_value(0.2, 0.3) - 0.729).abs() < 1e-12);
        assert_eq!(icc_similarity_value(0.0, 1.0), 0.0);
        assert!((reliability_similarity_value(0.862, 0.762) - 0.9).abs() < 1e-12);
        assert!((reliability_similarity_value(0.862, 0.0) - 0.138).abs() < 1e-12);
        // Strictly decreasing in the gap.
        let mut prev = 2.0;
        for k in 0..=10 {
            let v = icc_similarity_value(0.0, k as f64 / 10.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn errors_on_single_cluster_or_singletons() {
        assert!(one_way_anova(&[1.0, 2.0], &[0, 0]).is_err());
        assert!(one_way_anova(&[1.0, 2.0], &[0, 1]).is_err());
        assert!(matches!(
            anova_components(&[1.0, 1.0, 1.0, 1.0], &labels(&[2, 2])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn multicategory_is_mean_of_dummies() {
        let codes = vec![0u32, 0, 1, 1, 2, 2, 0, 1, 2];
        let cluster = labels(&[3, 3, 3]);
        let col = Column::categorical("c", vec!["a".into(), "b".into(), "c".into()], codes.clone());
        let vc = column_components(&col, &cluster).unwrap();
        let mut iccs = Vec::new();
        for cat in 0..3u32 {
            let d: Vec<f64> = codes.iter().map(|&c| if c == cat { 1.0 } else { 0.0 }).collect();
            let a = one_way_anova(&d, &cluster).unwrap();
            let t = a.tau2();
            iccs.push(if t > 0.0 { t / (t + LOGISTIC_VARIANCE) } else { 0.0 });
        }
        assert!((vc.icc - iccs.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert_eq!(vc.method, VarianceMethod::CategoryMean { categories: 3 });
    }
}
