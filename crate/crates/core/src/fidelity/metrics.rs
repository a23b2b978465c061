//! Distributional similarity primitives. Each returns a score in [0, 1]
//! where 1 means the compared substructures agree exactly.

use std::collections::BTreeMap;

use super::score::MetricScore;
use crate::error::{Error, Result};

fn non_empty<T>(real: &[T], synth: &[T], what: &str) -> Result<()> {
    if real.is_empty() || synth.is_empty() {
        Err(Error::invalid(format!("{what}: empty sample")))
    } else {
        Ok(())
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic sup_x |F_a(x) - F_b(x)|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Kolmogorov–Smirnov complement.
pub fn ksc(real: &[f64], synth: &[f64]) -> Result<MetricScore> {
    non_empty(real, synth, "ksc")?;
    Ok(MetricScore::new("ksc", 1.0 - ks_statistic(real, synth)))
}

fn proportions<T: Ord + Clone>(values: impl Iterator<Item = T>) -> (BTreeMap<T, f64>, f64) {
    let mut counts = BTreeMap::new();
    let mut n = 0.0;
    for v in values {
        *counts.entry(v).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    (counts, n)
}

/// Total variation distance between two empirical distributions over the
/// union of observed labels.
pub fn total_variation<T: Ord + Clone>(
    real: impl Iterator<Item = T>,
    synth: impl Iterator<Item = T>,
) -> f64 {
    let (r, nr) = proportions(real);
    let (s, ns) = proportions(synth);
    let mut sum = 0.0;
    for (k, &cr) in &r {
        let cs = s.get(k).copied().unwrap_or(0.0);
        sum += (cr / nr - cs / ns).abs();
    }
    for (k, &cs) in &s {
        if !r.contains_key(k) {
            sum += cs / ns;
        }
    }
    0.5 * sum
}

/// Total variation distance complement.
pub fn tvc<T: Ord + Clone>(real: &[T], synth: &[T]) -> Result<MetricScore> {
    non_empty(real, synth, "tvc")?;
    let d = total_variation(real.iter().cloned(), synth.iter().cloned());
    Ok(MetricScore::new("tvc", 1.0 - d))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("correlation: columns differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::degenerate("correlation needs at least two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::degenerate("correlation undefined for a zero-variance column"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - |rho_s - rho_r| / 2`.
pub fn correlation_similarity_value(rho_real: f64, rho_synth: f64) -> f64 {
    1.0 - (rho_synth - rho_real).abs() / 2.0
}

pub fn correlation_similarity(real: (&[f64], &[f64]), synth: (&[f64], &[f64])) -> Result<MetricScore> {
    let rr = pearson(real.0, real.1)?;
    let rs = pearson(synth.0, synth.1)?;
    Ok(MetricScore::new("correlation", correlation_similarity_value(rr, rs)))
}

/// Complement of the total variation distance between joint contingency tables.
pub fn contingency_similarity<A: Ord + Clone, B: Ord + Clone>(
    real: (&[A], &[B]),
    synth: (&[A], &[B]),
) -> Result<MetricScore> {
    if real.0.len() != real.1.len() || synth.0.len() != synth.1.len() {
        return Err(Error::invalid("contingency: columns differ in length"));
    }
    non_empty(real.0, synth.0, "contingency")?;
    let r = real.0.iter().cloned().zip(real.1.iter().cloned());
    let s = synth.0.iter().cloned().zip(synth.1.iter().cloned());
    Ok(MetricScore::new("contingency", 1.0 - total_variation(r, s)))
}

/// Correlation ratio SS_between / SS_total of a numeric variable over groups.
pub fn eta_squared<G: Ord + Clone>(values: &[f64], groups: &[G]) -> Result<f64> {
    if values.len() != groups.len() {
        return Err(Error::invalid("eta-squared: columns differ in length"));
    }
    if values.is_empty() {
        return Err(Error::invalid("eta-squared: empty sample"));
    }
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let mut by_group: BTreeMap<G, (f64, f64)> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        let e = by_group.entry(g.clone()).or_insert((0.0, 0.0));
        e.0 += v;
        e.1 += 1.0;
    }
    if by_group.len() < 2 {
        return Err(Error::degenerate("eta-squared needs at least two groups"));
    }
    let ss_total: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();
    if ss_total <= 0.0 {
        return Err(Error::degenerate("eta-squared undefined for a constant column"));
    }
    let ss_between: f64 = by_group
        .values()
        .map(|&(s, c)| c * (s / c - grand).powi(2))
        .sum();
    Ok((ss_between / ss_total).clamp(0.0, 1.0))
}

pub fn eta_squared_similarity<G: Ord + Clone>(real: (&[f64], &[G]), synth: (&[f64], &[G])) -> Result<MetricScore> {
    let er = eta_squared(real.0, real.1)?;
    let es = eta_squared(synth.0, synth.1)?;
    Ok(MetricScore::new("eta_squared", 1.0 - (es - er).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// ECDF difference evaluated at every pooled sample point (the supremum
    /// of step functions is attained there).
    fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ksc_hand_values() {
        assert_eq!(ksc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap().value, 1.0);
        assert_eq!(ksc(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap().value, 0.5);
        assert_eq!(ksc(&[0.0, 1.0], &[10.0, 11.0]).unwrap().value, 0.0);
        assert!(ksc(&[], &[1.0]).is_err());
    }

    #[test]
    fn tvc_hand_values() {
        assert_eq!(tvc(&["a", "b"], &["b", "a"]).unwrap().value, 1.0);
        let real = ["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"];
        let synth = ["a", "a", "a", "a", "a", "a", "a", "a", "b", "b"];
        assert!((tvc(&real, &synth).unwrap().value - 0.7).abs() < 1e-12);
        assert_eq!(tvc(&["a"], &["b"]).unwrap().value, 0.0);
    }

    #[test]
    fn correlation_hand_values() {
        assert!((correlation_similarity_value(0.6, 0.2) - 0.8).abs() < 1e-12);
        assert_eq!(correlation_similarity_value(1.0, -1.0), 0.0);
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 7.0];
        assert_eq!(correlation_similarity((&x, &y), (&x, &y)).unwrap().value, 1.0);
        let neg = [7.0, 4.0, 2.0];
        let perfect = [1.0, 2.0, 3.0];
        let s = correlation_similarity((&x, &perfect), (&x, &[3.0, 2.0, 1.0])).unwrap();
        assert!(s.value < 1e-12);
        assert!(matches!(
            correlation_similarity((&x, &[1.0, 1.0, 1.0]), (&x, &neg)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn contingency_hand_values() {
        let ra = ["A", "B"];
        let rb = ["X", "Y"];
        let sa = ["A", "A", "B", "B"];
        let sb = ["X", "Y", "X", "Y"];
        let s = contingency_similarity((&ra, &rb), (&sa, &sb)).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        assert_eq!(contingency_similarity((&ra, &rb), (&ra, &rb)).unwrap().value, 1.0);
        assert_eq!(
            contingency_similarity((&ra, &rb), (&["C"], &["Z"])).unwrap().value,
            0.0
        );
    }

    #[test]
    fn eta_squared_hand_values() {
        // Real: groups {0,0} and {1,1}: all variance between groups.
        let rv = [0.0, 0.0, 1.0, 1.0];
        let rg = ["g", "g", "h", "h"];
        assert_eq!(eta_squared(&rv, &rg).unwrap(), 1.0);
        // Synth: group means 0.25 / 0.75 with SS_between = 0.25, SS_total = 0.5.
        let sv = [0.0, 0.5, 0.5, 1.0];
        assert!((eta_squared(&sv, &rg).unwrap() - 0.5).abs() < 1e-12);
        let s = eta_squared_similarity((&rv, &rg), (&sv, &rg)).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        // Equal group means on both sides.
        let flat = [0.0, 1.0, 0.0, 1.0];
        let alt = [2.0, 4.0, 4.0, 2.0];
        assert_eq!(eta_squared_similarity((&flat, &rg), (&alt, &rg)).unwrap().value, 1.0);
        assert!(matches!(eta_squared(&[1.0, 1.0], &["a", "b"]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ksc_mixture_is_monotone() {
        // Synthetic sample = first k points from `other`, rest from `real`.
        let real: Vec<f64> = (0..20).map(f64::from).collect();
        let other: Vec<f64> = (0..20).map(|i| 100.0 + f64::from(i)).collect();
        let mut prev = 1.0;
        for k in 0..=20 {
            let synth: Vec<f64> = other[..k].iter().chain(&real[k..]).copied().collect();
            let v = ksc(&real, &synth).unwrap().value;
            assert!((v - (1.0 - ks_oracle(&real, &synth))).abs() < 1e-12);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn ks_matches_oracle_and_is_symmetric(
            a in proptest::collection::vec(-5i32..5, 1..30),
            b in proptest::collection::vec(-5i32..5, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b);
            prop_assert!((d - ks_oracle(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(d, ks_statistic(&b, &a));
            let mut rev = a.clone();
            rev.reverse();
            prop_assert_eq!(d, ks_statistic(&rev, &b));
        }

        #[test]
        fn tvc_in_unit_interval_and_symmetric(
            a in proptest::collection::vec(0u8..4, 1..40),
            b in proptest::collection::vec(0u8..4, 1..40),
        ) {
            let x = tvc(&a, &b).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((x - tvc(&b, &a).unwrap().value).abs() < 1e-15);
        }
    }
}
