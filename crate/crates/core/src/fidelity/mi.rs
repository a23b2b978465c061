//! Plug-in mutual information on discretized columns and the normalized-MI
//! matrix similarity.

use std::collections::HashMap;

use super::score::MetricScore;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;

/// A column as seen by the MI estimator.
#[derive(Debug, Clone, Copy)]
pub enum MiColumn<'a> {
    Numeric(&'a [f64]),
    Categorical(&'a [u32]),
}

impl MiColumn<'_> {
    fn len(&self) -> usize {
        match self {
            MiColumn::Numeric(v) => v.len(),
            MiColumn::Categorical(v) => v.len(),
        }
    }
}

/// Equal-frequency bin edges computed on the pooled sample; ties collapse.
pub fn equal_frequency_edges(pooled: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|k| sorted[k * m / bins]).collect();
    edges.dedup();
    edges
}

pub fn bin_index(edges: &[f64], x: f64) -> u32 {
    edges.partition_point(|&e| e <= x) as u32
}

/// Discretizes a real/synthetic pair with shared edges.
pub fn discretize_pair(real: &[f64], synth: &[f64], bins: usize) -> (Vec<u32>, Vec<u32>) {
    let pooled: Vec<f64> = real.iter().chain(synth).copied().collect();
    if pooled.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let edges = equal_frequency_edges(&pooled, bins);
    let f = |v: &[f64]| v.iter().map(|&x| bin_index(&edges, x)).collect();
    (f(real), f(synth))
}

fn codes_pair(real: MiColumn, synth: MiColumn, bins: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    match (real, synth) {
        (MiColumn::Numeric(r), MiColumn::Numeric(s)) => Ok(discretize_pair(r, s, bins)),
        (MiColumn::Categorical(r), MiColumn::Categorical(s)) => Ok((r.to_vec(), s.to_vec())),
        _ => Err(Error::invalid("MI: real and synthetic column kinds differ")),
    }
}

/// Plug-in (maximum-likelihood) mutual information in nats.
pub fn plugin_mi(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    let mut ma: HashMap<u32, usize> = HashMap::new();
    let mut mb: HashMap<u32, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let nf = n as f64;
    let mut cells: Vec<((u32, u32), usize)> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .into_iter()
        .map(|((x, y), c)| {
            let pxy = c as f64 / nf;
            let px = ma[&x] as f64 / nf;
            let py = mb[&y] as f64 / nf;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    mi.max(0.0)
}

fn normalized(m: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = m.iter().sum();
    (total > 0.0).then(|| m.iter().map(|v| v / total).collect())
}

fn matrix_similarity(real: &[f64], synth: &[f64], name: &str) -> Result<MetricScore> {
    let (Some(r), Some(s)) = (normalized(real), normalized(synth)) else {
        return Err(Error::degenerate(format!(
            "{name}: MI matrix is all zero, cannot normalize"
        )));
    };
    let tv: f64 = 0.5 * r.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(MetricScore::new(name, 1.0 - tv))
}

fn discretize_all(real: &[MiColumn], synth: &[MiColumn], bins: usize) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>)> {
    if real.len() != synth.len() {
        return Err(Error::invalid("MI: column counts differ"));
    }
    let mut r = Vec::with_capacity(real.len());
    let mut s = Vec::with_capacity(real.len());
    for (&a, &b) in real.iter().zip(synth) {
        let (x, y) = codes_pair(a, b, bins)?;
        r.push(x);
        s.push(y);
    }
    Ok((r, s))
}

/// Pairwise MI matrix (diagonal zero), flattened row-major.
pub fn mi_matrix(columns: &[Vec<u32>]) -> Vec<f64> {
    let p = columns.len();
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        for j in (i + 1)..p {
            let v = plugin_mi(&columns[i], &columns[j]);
            m[i * p + j] = v;
            m[j * p + i] = v;
        }
    }
    m
}

/// MI similarity over all column pairs of one table.
pub fn mi_similarity(real: &[MiColumn], synth: &[MiColumn], bins: usize) -> Result<MetricScore> {
    if real.len() < 2 {
        return Err(Error::invalid("MI similarity needs at least two columns"));
    }
    if real.iter().any(|c| c.len() == 0) || synth.iter().any(|c| c.len() == 0) {
        return Err(Error::invalid("MI similarity: empty sample"));
    }
    let (r, s) = discretize_all(real, synth, bins)?;
    matrix_similarity(&mi_matrix(&r), &mi_matrix(&s), "mi")
}

/// MI similarity restricted to the rows × columns cross block (e.g. parent
/// columns against child columns, all aligned on child rows).
pub fn mi_block_similarity(
    real_rows: &[MiColumn],
    real_cols: &[MiColumn],
    synth_rows: &[MiColumn],
    synth_cols: &[MiColumn],
    bins: usize,
) -> Result<MetricScore> {
    if real_rows.is_empty() || real_cols.is_empty() {
        return Err(Error::invalid("MI block needs columns on both sides"));
    }
    let (rr, sr) = discretize_all(real_rows, synth_rows, bins)?;
    let (rc, sc) = discretize_all(real_cols, synth_cols, bins)?;
    let block = |rows: &[Vec<u32>], cols: &[Vec<u32>]| -> Vec<f64> {
        rows.iter()
            .flat_map(|a| cols.iter().map(move |b| plugin_mi(a, b)))
            .collect()
    };
    matrix_similarity(&block(&rr, &rc), &block(&sr, &sc), "khop_mi")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force MI from a dense joint histogram.
    fn mi_oracle(a: &[u32], b: &[u32]) -> f64 {
        let ka = *a.iter().max().unwrap() as usize + 1;
        let kb = *b.iter().max().unwrap() as usize + 1;
        let mut table = vec![vec![0.0f64; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            table[x as usize][y as usize] += 1.0;
        }
        let n = a.len() as f64;
        let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / n).collect();
        let col: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut mi = 0.0;
        for i in 0..ka {
            for j in 0..kb {
                let p = table[i][j] / n;
                if p > 0.0 {
                    mi += p * (p / (row[i] * col[j])).ln();
                }
            }
        }
        mi
    }

    fn similarity_oracle(real: &[Vec<u32>], synth: &[Vec<u32>]) -> f64 {
        let full = |cols: &[Vec<u32>]| {
            let p = cols.len();
            let mut m = vec![0.0; p * p];
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        m[i * p + j] = mi_oracle(&cols[i], &cols[j]);
                    }
                }
            }
            let t: f64 = m.iter().sum();
            m.into_iter().map(|v| v / t).collect::<Vec<_>>()
        };
        let (r, s) = (full(real), full(synth));
        1.0 - 0.5 * r.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    #[test]
    fn plugin_mi_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<u32> = (0..200).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<u32> = a.iter().map(|&x| if rng.random_bool(0.6) { x } else { rng.random_range(0..3) }).collect();
            assert!((plugin_mi(&a, &b) - mi_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    fn cols(v: &[Vec<u32>]) -> Vec<MiColumn<'_>> {
        v.iter().map(|c| MiColumn::Categorical(c)).collect()
    }

    #[test]
    fn dependent_real_vs_independent_synth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let b = a.clone();
        let c: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let real = vec![a, b, c];
        let synth: Vec<Vec<u32>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(0..3)).collect()).collect();
        let score = mi_similarity(&cols(&real), &cols(&synth), DEFAULT_BINS).unwrap();
        let oracle = similarity_oracle(&real, &synth);
        assert!((score.value - oracle).abs() < 1e-12);
        assert!(score.value < 0.6);
    }

    #[test]
    fn identical_tables_and_column_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + 0.1 * rng.random::<f64>()).collect();
        let g: Vec<u32> = x.iter().map(|&v| (v > 0.5) as u32).collect();
        let real = [MiColumn::Numeric(&x), MiColumn::Numeric(&y), MiColumn::Categorical(&g)];
        assert_eq!(mi_similarity(&real, &real, DEFAULT_BINS).unwrap().value, 1.0);

        let y2: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let synth = [MiColumn::Numeric(&x), MiColumn::Numeric(&y2), MiColumn::Categorical(&g)];
        let a = mi_similarity(&real, &synth, DEFAULT_BINS).unwrap().value;
        let real_p = [real[2], real[0], real[1]];
        let synth_p = [synth[2], synth[0], synth[1]];
        let b = mi_similarity(&real_p, &synth_p, DEFAULT_BINS).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn all_zero_matrix_is_degenerate() {
        let a = [0u32, 0, 1, 1];
        let b = [0u32, 1, 0, 1];
        let cols = [MiColumn::Categorical(&a), MiColumn::Categorical(&b)];
        assert!(matches!(
            mi_similarity(&cols, &cols, DEFAULT_BINS),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn shared_edges_bin_identically() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let (a, b) = discretize_pair(&v, &v, 20);
        assert_eq!(a, b);
        assert_eq!(*a.iter().max().unwrap(), 19);
        let counts = (0..20).map(|k| a.iter().filter(|&&c| c == k).count()).collect::<Vec<_>>();
        assert!(counts.iter().all(|&c| c == 5));
    }
}
