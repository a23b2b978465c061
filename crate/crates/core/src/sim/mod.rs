//! Replication engine for predictive-performance and parameter-recovery
//! studies, plus ablations over design variants.

mod ablation;
mod design;
mod run;
mod summary;
pub mod synth;

pub use ablation::{
    apply_variant, merge_patch, quality_scores, run_ablation, run_ablation_with_sources, AblationDesign, AblationReport,
    Delta, QualitySettings, QualitySummary, Variant, VariantReport,
};
pub use design::{
    Holdout, ModelSpec, PoolSampling, PredictiveConfig, PredictiveMethod, RecoveryConfig, RecoveryMethod, Source,
    SourceSpec, Study, StudyDesign, StudyKind, TruthSpec, DEFAULT_REPLICATIONS, PREDICTIVE_CONDITIONS,
    RECOVERY_CONDITIONS,
};
pub use run::{
    holdout_rows, predictive_replication, recovery_replication, resummarize, run_design, run_study, with_workers,
    workers_from_env, StudyOutput, WORKERS_ENV,
};
pub use summary::{read_log, summarize_predictive, summarize_recovery, write_log, CellResult, ReplicationRecord, ResultKind, StudyResult};
