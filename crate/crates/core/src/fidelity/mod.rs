//! Fidelity metrics: within-table marginal and pairwise similarity,
//! between-table structure, variance components and the generalization check.

mod between;
pub mod icc;
pub mod metrics;
pub mod mi;
mod score;
mod within;

pub use between::{
    cardinality_shape_similarity, generalization_score, khop_score, khop_scores, between_table_report,
    referential_integrity, BetweenTableReport,
};
pub use icc::{estimate_variance_components, icc_similarity, reliability_similarity, VarianceComponents, VarianceMethod};
pub use metrics::{contingency_similarity, correlation_similarity, eta_squared_similarity, ksc, tvc};
pub use mi::{mi_similarity, MiColumn};
pub(crate) use score::mean;
pub use score::{Category, MetricScore, SkippedMetric, OVERFIT_THRESHOLD};
pub use within::{within_table_report, WithinTableReport};

use crate::data::Column;
use crate::error::{Error, Result};

/// Recodes two categorical columns onto the union of their labels.
pub(crate) fn aligned_codes(real: &Column, synth: &Column) -> (Vec<u32>, Vec<u32>) {
    let (rc, sc) = (real.as_codes().unwrap_or(&[]), synth.as_codes().unwrap_or(&[]));
    if real.categories() == synth.categories() {
        return (rc.to_vec(), sc.to_vec());
    }
    let mut union: Vec<&str> = real.categories().iter().chain(synth.categories()).map(String::as_str).collect();
    union.sort_unstable();
    union.dedup();
    let map = |col: &Column| -> Vec<u32> {
        col.categories()
            .iter()
            .map(|c| union.binary_search(&c.as_str()).unwrap() as u32)
            .collect()
    };
    let (rm, sm) = (map(real), map(synth));
    (
        rc.iter().map(|&c| rm[c as usize]).collect(),
        sc.iter().map(|&c| sm[c as usize]).collect(),
    )
}

/// Routes a metric result: degenerate inputs become skipped entries.
pub(crate) fn collect(
    result: Result<MetricScore>,
    name: String,
    scores: &mut Vec<MetricScore>,
    skipped: &mut Vec<SkippedMetric>,
) -> Result<()> {
    match result {
        Ok(s) => scores.push(s),
        Err(Error::Degenerate(reason)) => skipped.push(SkippedMetric { name, reason }),
        Err(e) => return Err(e),
    }
    Ok(())
}
