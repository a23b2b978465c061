use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::synth::synthesize;
use crate::data::{load_dataset, LoadOptions, MultilevelDataset, MultilevelSchema};
use crate::error::{Error, Result};
use crate::generators::{
    cluster_bootstrap, generate_afshartous, generate_hierarchical, generate_huang, AfshartousSpec,
    HierarchicalGaussianSpec, HuangDgpSpec, OutcomeModelShape, OutcomeModelSpec,
};
use crate::seed::derive_seed;

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const PREDICTIVE_CONDITIONS: [usize; 5] = [10, 25, 50, 100, 300];
pub const RECOVERY_CONDITIONS: [usize; 4] = [10, 30, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PoolSampling {
    /// Clusters drawn without replacement.
    #[default]
    Subsample,
    /// Clusters drawn with replacement.
    Bootstrap,
    /// Reference synthesizer fitted to the pool.
    Synthesize { decomposition: bool },
}

/// Serializable description of where replication datasets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SourceSpec {
    Hierarchical {
        spec: HierarchicalGaussianSpec,
    },
    Afshartous {
        #[serde(default)]
        spec: AfshartousSpec,
    },
    Huang {
        #[serde(default)]
        spec: HuangDgpSpec,
    },
    /// A fixed dataset on disk; relative paths resolve against the design file.
    Pool {
        schema: PathBuf,
        parent: PathBuf,
        child: PathBuf,
        #[serde(default)]
        sampling: PoolSampling,
    },
}

/// A resolved data source.
#[derive(Debug, Clone)]
pub enum Source {
    Hierarchical(HierarchicalGaussianSpec),
    Afshartous(AfshartousSpec),
    Huang(HuangDgpSpec),
    Pool {
        dataset: Arc<MultilevelDataset>,
        sampling: PoolSampling,
    },
}

impl SourceSpec {
    pub fn resolve(&self, base: &Path) -> Result<Source> {
        Ok(match self {
            SourceSpec::Hierarchical { spec } => Source::Hierarchical(spec.clone()),
            SourceSpec::Afshartous { spec } => Source::Afshartous(spec.clone()),
            SourceSpec::Huang { spec } => Source::Huang(spec.clone()),
            SourceSpec::Pool {
                schema,
                parent,
                child,
                sampling,
            } => {
                let schema = MultilevelSchema::from_path(&base.join(schema))?;
                let dataset = load_dataset(&base.join(parent), &base.join(child), &schema, LoadOptions::default())?;
                Source::Pool {
                    dataset: Arc::new(dataset),
                    sampling: *sampling,
                }
            }
        })
    }
}

impl Source {
    pub fn pool(dataset: MultilevelDataset, sampling: PoolSampling) -> Self {
        Source::Pool {
            dataset: Arc::new(dataset),
            sampling,
        }
    }

    /// One replication dataset with `clusters` clusters.
    pub fn draw(&self, clusters: usize, seed: u64) -> Result<MultilevelDataset> {
        match self {
            Source::Hierarchical(spec) => {
                let mut spec = spec.clone();
                spec.clusters = clusters;
                generate_hierarchical(&spec, seed)
            }
            Source::Afshartous(spec) => generate_afshartous(&spec.clone().with_clusters(clusters), seed),
            Source::Huang(spec) => generate_huang(spec, clusters, seed),
            Source::Pool { dataset, sampling } => match sampling {
                PoolSampling::Subsample => cluster_bootstrap(dataset, clusters, false, seed),
                PoolSampling::Bootstrap => cluster_bootstrap(dataset, clusters, true, seed),
                PoolSampling::Synthesize { decomposition } => synthesize(dataset, clusters, *decomposition, seed),
            },
        }
    }

    pub fn pool_clusters(&self) -> Option<usize> {
        match self {
            Source::Pool { dataset, .. } => Some(dataset.n_clusters()),
            _ => None,
        }
    }

    /// Keeps a random fraction of the pool's clusters.
    pub fn with_pool_fraction(self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid("pool fraction must lie in (0, 1]"));
        }
        match self {
            Source::Pool { dataset, sampling } => {
                let keep = ((dataset.n_clusters() as f64 * fraction).round() as usize).max(1);
                Ok(Source::Pool {
                    dataset: Arc::new(cluster_bootstrap(&dataset, keep, false, seed)?),
                    sampling,
                })
            }
            _ => Err(Error::invalid("a pool fraction needs a pool source")),
        }
    }

    /// A dataset that stands for the real data in quality comparisons.
    pub fn reference(&self, clusters: usize, seed: u64) -> Result<MultilevelDataset> {
        match self {
            Source::Pool { dataset, .. } => Ok((**dataset).clone()),
            _ => self.draw(clusters, seed),
        }
    }
}

/// Model used by the prediction rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: String,
    #[serde(default)]
    pub child: Vec<String>,
    #[serde(default)]
    pub parent: Vec<String>,
    /// `[child, parent]` products entering the fixed part.
    #[serde(default)]
    pub interactions: Vec<[String; 2]>,
    /// Child covariate with a random slope (and cluster slopes under OLS-FE).
    #[serde(default)]
    pub random_slope: Option<String>,
}

impl ModelSpec {
    pub fn afshartous() -> Self {
        Self {
            outcome: "y".into(),
            child: vec![AfshartousSpec::CHILD.into()],
            parent: vec![AfshartousSpec::PARENT.into()],
            interactions: vec![[AfshartousSpec::CHILD.into(), AfshartousSpec::PARENT.into()]],
            random_slope: Some(AfshartousSpec::CHILD.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Holdout {
    /// One random child per cluster with at least two children.
    #[default]
    OnePerCluster,
    /// This share of each such cluster, at least one child and never all.
    Fraction { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMethod {
    OlsFe,
    Prior,
    Multilevel,
}

impl PredictiveMethod {
    pub const ALL: [PredictiveMethod; 3] = [PredictiveMethod::OlsFe, PredictiveMethod::Prior, PredictiveMethod::Multilevel];

    pub fn name(self) -> &'static str {
        match self {
            PredictiveMethod::OlsFe => "ols_fe",
            PredictiveMethod::Prior => "prior",
            PredictiveMethod::Multilevel => "multilevel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMethod {
    Ols,
    OlsIgm,
    Hlm,
    HlmIgm,
    Oracle,
}

impl RecoveryMethod {
    pub const ALL: [RecoveryMethod; 5] = [
        RecoveryMethod::Ols,
        RecoveryMethod::OlsIgm,
        RecoveryMethod::Hlm,
        RecoveryMethod::HlmIgm,
        RecoveryMethod::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecoveryMethod::Ols => "ols",
            RecoveryMethod::OlsIgm => "ols_igm",
            RecoveryMethod::Hlm => "hlm",
            RecoveryMethod::HlmIgm => "hlm_igm",
            RecoveryMethod::Oracle => "oracle",
        }
    }
}

fn all_predictive() -> Vec<PredictiveMethod> {
    PredictiveMethod::ALL.to_vec()
}

fn all_recovery() -> Vec<RecoveryMethod> {
    RecoveryMethod::ALL.to_vec()
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub holdout: Holdout,
    #[serde(default = "all_predictive")]
    pub methods: Vec<PredictiveMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "from")]
pub enum TruthSpec {
    Given { spec: OutcomeModelSpec },
    /// Estimated once on the source's reference dataset.
    Learned { shape: OutcomeModelShape },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub truth: TruthSpec,
    /// Coefficients whose recovery is measured.
    pub tracked: Vec<String>,
    #[serde(default = "all_recovery")]
    pub methods: Vec<RecoveryMethod>,
    /// Extra covariates left out of every model except the oracle, on top
    /// of columns marked omitted in the data.
    #[serde(default)]
    pub omitted: Vec<String>,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StudyKind {
    Predictive(PredictiveConfig),
    Recovery(RecoveryConfig),
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub study: StudyKind,
    /// Numbers of clusters. Defaults depend on the study kind.
    #[serde(default)]
    pub conditions: Option<Vec<usize>>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub source: SourceSpec,
    #[serde(default)]
    pub master_seed: u64,
    /// Keep only this share of a pool's clusters before sampling.
    #[serde(default)]
    pub pool_fraction: Option<f64>,
}

impl StudyDesign {
    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn conditions(&self) -> Vec<usize> {
        match (&self.conditions, &self.study) {
            (Some(c), _) => c.clone(),
            (None, StudyKind::Predictive(_)) => PREDICTIVE_CONDITIONS.to_vec(),
            (None, StudyKind::Recovery(_)) => RECOVERY_CONDITIONS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::invalid("a study needs at least two replications"));
        }
        let conditions = self.conditions();
        if conditions.is_empty() || conditions.contains(&0) {
            return Err(Error::invalid("conditions must be positive cluster counts"));
        }
        match &self.study {
            StudyKind::Predictive(p) if p.methods.is_empty() => Err(Error::invalid("no prediction rules selected")),
            StudyKind::Predictive(PredictiveConfig {
                holdout: Holdout::Fraction { fraction },
                ..
            }) if !(*fraction > 0.0 && *fraction < 1.0) => Err(Error::invalid("holdout fraction must lie in (0, 1)")),
            StudyKind::Recovery(r) if r.methods.is_empty() || r.tracked.is_empty() => {
                Err(Error::invalid("recovery studies need methods and tracked coefficients"))
            }
            StudyKind::Recovery(r) if !(r.level > 0.0 && r.level < 1.0) => Err(Error::invalid("interval level must lie in (0, 1)")),
            _ => Ok(()),
        }
    }

    /// Resolves the source (relative paths against `base`) and applies the
    /// pool fraction.
    pub fn resolve(&self, base: &Path) -> Result<Study> {
        self.validate()?;
        let source = self.source.resolve(base)?;
        Study::new(self.clone(), source)
    }
}

/// A design bound to a resolved source.
#[derive(Debug, Clone)]
pub struct Study {
    pub design: StudyDesign,
    pub source: Source,
}

impl Study {
    pub fn new(design: StudyDesign, source: Source) -> Result<Self> {
        design.validate()?;
        let source = match design.pool_fraction {
            Some(f) => source.with_pool_fraction(f, derive_seed(design.master_seed, 0, 0, "pool-fraction"))?,
            None => source,
        };
        Ok(Self { design, source })
    }
}
