use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::design::{Source, Study, StudyDesign};
use super::run::run_study;
use super::summary::StudyResult;
use crate::error::{Error, Result};
use crate::fidelity::{between_table_report, within_table_report};
use crate::seed::derive_seed;

/// A named set of overrides merged into the base design (JSON merge patch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub overrides: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySettings {
    /// Clusters per synthetic draw; defaults to the reference size.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    10
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDesign {
    pub base: StudyDesign,
    pub variants: Vec<Variant>,
    /// Also compare data quality of each variant's source against the reference.
    #[serde(default)]
    pub quality: Option<QualitySettings>,
    #[serde(default = "yes")]
    pub run_studies: bool,
}

/// Mean quality scores of draws from a source against its reference data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub draws: usize,
    pub icc_similarity: Option<f64>,
    pub reliability_similarity: Option<f64>,
    pub between_avg: f64,
    pub child_table_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub condition: usize,
    pub method: String,
    pub criterion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<String>,
    pub base: Option<f64>,
    pub variant: Option<f64>,
    pub delta: Option<f64>,
    /// Change relative to the base value, in percent.
    pub relative_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub design: StudyDesign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_clusters: Option<usize>,
    pub pool_changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<StudyResult>,
    #[serde(default)]
    pub deltas: Vec<Delta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base: VariantReport,
    pub variants: Vec<VariantReport>,
}

/// RFC 7396 merge patch.
pub fn merge_patch(target: &mut Value, patch: &Value) {
    match patch {
        Value::Object(p) => {
            if !target.is_object() {
                *target = Value::Object(Default::default());
            }
            let t = target.as_object_mut().expect("object");
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        other => *target = other.clone(),
    }
}

pub fn apply_variant(base: &StudyDesign, variant: &Variant) -> Result<StudyDesign> {
    let mut value = serde_json::to_value(base)?;
    merge_patch(&mut value, &variant.overrides);
    let design: StudyDesign = serde_json::from_value(value)?;
    design.validate()?;
    Ok(design)
}

fn mean_of(scores: &[f64]) -> Option<f64> {
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Averages ICC, reliability and table scores of `seeds` draws from the
/// source against its reference dataset.
pub fn quality_scores(source: &Source, clusters: Option<usize>, seeds: usize, master_seed: u64) -> Result<QualitySummary> {
    if seeds == 0 {
        return Err(Error::invalid("quality comparison needs at least one draw"));
    }
    let reference_size = clusters.unwrap_or(100);
    let reference = source.reference(reference_size, derive_seed(master_seed, 0, 0, "reference"))?;
    let clusters = clusters.unwrap_or(reference.n_clusters());
    let (mut icc, mut rel, mut between, mut child) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..seeds {
        let synth = source.draw(clusters, derive_seed(master_seed, 0, s as u64, "quality"))?;
        let b = between_table_report(&reference, &synth)?;
        let avg = |prefix: &str| mean_of(&b.scores().filter(|m| m.name.starts_with(prefix)).map(|m| m.value).collect::<Vec<_>>());
        if let Some(v) = avg("icc:") {
            icc.push(v);
        }
        if let Some(v) = avg("reliability:") {
            rel.push(v);
        }
        between.push(b.between_avg);
        child.push(within_table_report(reference.child(), synth.child())?.table_avg);
    }
    Ok(QualitySummary {
        draws: seeds,
        icc_similarity: mean_of(&icc),
        reliability_similarity: mean_of(&rel),
        between_avg: mean_of(&between).expect("at least one draw"),
        child_table_avg: mean_of(&child).expect("at least one draw"),
    })
}

fn deltas(base: &StudyResult, variant: &StudyResult) -> Vec<Delta> {
    variant
        .cells
        .iter()
        .map(|c| {
            let b = base.value(c.condition, &c.method, &c.criterion, c.coefficient.as_deref());
            let delta = b.zip(c.value).map(|(b, v)| v - b);
            Delta {
                condition: c.condition,
                method: c.method.clone(),
                criterion: c.criterion.clone(),
                coefficient: c.coefficient.clone(),
                base: b,
                variant: c.value,
                delta,
                relative_pct: b.zip(delta).filter(|(b, _)| *b != 0.0).map(|(b, d)| 100.0 * d / b.abs()),
            }
        })
        .collect()
}

fn evaluate(name: &str, design: StudyDesign, ablation: &AblationDesign, base_dir: &Path, workers: Option<usize>) -> Result<VariantReport> {
    let study = design.resolve(base_dir)?;
    run_variant(name, study, ablation, workers)
}

fn run_variant(name: &str, study: Study, ablation: &AblationDesign, workers: Option<usize>) -> Result<VariantReport> {
    let result = if ablation.run_studies {
        Some(run_study(&study, workers)?.result)
    } else {
        None
    };
    let quality = match &ablation.quality {
        Some(q) => Some(quality_scores(&study.source, q.clusters, q.seeds, study.design.master_seed)?),
        None => None,
    };
    Ok(VariantReport {
        name: name.to_string(),
        pool_clusters: study.source.pool_clusters(),
        pool_changed: false,
        design: study.design,
        result,
        deltas: Vec::new(),
        quality,
    })
}

fn finish(base: VariantReport, mut variants: Vec<VariantReport>) -> AblationReport {
    for v in &mut variants {
        v.pool_changed = v.pool_clusters != base.pool_clusters;
        if let (Some(b), Some(r)) = (&base.result, &v.result) {
            v.deltas = deltas(b, r);
        }
    }
    AblationReport { base, variants }
}

/// Runs the base design and every variant with everything else held fixed,
/// reporting each variant's change relative to the base.
pub fn run_ablation(ablation: &AblationDesign, base_dir: &Path, workers: Option<usize>) -> Result<AblationReport> {
    let base = evaluate("base", ablation.base.clone(), ablation, base_dir, workers)?;
    let variants = ablation
        .variants
        .iter()
        .map(|v| evaluate(&v.name, apply_variant(&ablation.base, v)?, ablation, base_dir, workers))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(base, variants))
}

/// Like [`run_ablation`], with every source already resolved.
pub fn run_ablation_with_sources(
    ablation: &AblationDesign,
    base: Source,
    variants: Vec<(String, StudyDesign, Source)>,
    workers: Option<usize>,
) -> Result<AblationReport> {
    let base = run_variant("base", Study::new(ablation.base.clone(), base)?, ablation, workers)?;
    let variants = variants
        .into_iter()
        .map(|(name, design, source)| run_variant(&name, Study::new(design, source)?, ablation, workers))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(base, variants))
}
