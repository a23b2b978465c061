//! A minimal reference synthesizer: resampled parent rows with children drawn
//! from the pooled child rows. With decomposition, numeric child columns are
//! pooled as within-cluster deviations and recombined with the cluster means
//! carried by the parent rows, so between-cluster variance survives.

use rand::Rng;

use crate::data::{decompose, recompose, ColumnKind, DecomposedDataset, LoadMode, MultilevelDataset};
use crate::error::{Error, Result};
use crate::generators::cluster_bootstrap;
use crate::seed::{derive_seed, stream};

fn pooled_children(boot: &MultilevelDataset, source: &MultilevelDataset, seed: u64) -> Result<MultilevelDataset> {
    let n = source.n_children();
    if n == 0 {
        return Err(Error::invalid("synthesizer source has no children"));
    }
    let mut rng = stream(seed, 0, 0, "pooled-children");
    let rows: Vec<usize> = (0..boot.n_children()).map(|_| rng.random_range(0..n)).collect();
    let mut child = source.child().select(&rows);
    child.keys = boot.child().keys.clone();
    MultilevelDataset::new(
        boot.schema().clone(),
        boot.parent().clone(),
        child,
        boot.foreign_keys().to_vec(),
        LoadMode::Strict,
    )
}

pub fn synthesize(real: &MultilevelDataset, clusters: usize, decomposition: bool, seed: u64) -> Result<MultilevelDataset> {
    let boot_seed = derive_seed(seed, 0, 0, "synth-parents");
    let child_seed = derive_seed(seed, 0, 0, "synth-children");
    if !decomposition {
        let boot = cluster_bootstrap(real, clusters, true, boot_seed)?;
        return pooled_children(&boot, real, child_seed);
    }
    let numeric: Vec<&str> = real
        .schema()
        .child
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Numeric)
        .map(|c| c.name.as_str())
        .collect();
    let dec = decompose(real, &numeric)?;
    let boot = cluster_bootstrap(dec.dataset(), clusters, true, boot_seed)?;
    let synth = pooled_children(&boot, dec.dataset(), child_seed)?;
    recompose(&DecomposedDataset::from_dataset(synth)?)
}
