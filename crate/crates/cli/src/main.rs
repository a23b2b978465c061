use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mlsynth::clca::{clca_apply, ClcaOptions};
use mlsynth::data::io::{write_child, write_parent};
use mlsynth::data::{
    decompose, load_dataset, load_flat, recompose, split_tables, DecomposedDataset, LoadOptions, MultilevelDataset,
    MultilevelSchema,
};
use mlsynth::report::{
    digest_file, evaluate, marginal_plot_data, sha256_hex, study_plot_data, EvaluationOptions, InputDigest, PlotSeries,
    TOOL_VERSION,
};
use mlsynth::sim::{run_ablation, run_design, with_workers, write_log, AblationDesign, SourceSpec, StudyDesign};

#[derive(Parser)]
#[command(name = "mlsynth", version, about = "Quality evaluation, repair and simulation for synthetic multilevel data")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "MLSYNTH_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RealPair {
    #[arg(long)]
    schema: PathBuf,
    /// Parent and child tables of the real data.
    #[arg(long, num_args = 2, value_names = ["PARENT", "CHILD"])]
    real: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a dataset against its schema.
    Validate {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, num_args = 2, value_names = ["PARENT", "CHILD"], conflicts_with = "flat", required_unless_present = "flat")]
        real: Vec<PathBuf>,
        /// A joined (flat) table instead of a parent/child pair.
        #[arg(long)]
        flat: Option<PathBuf>,
        /// Keep orphan child rows and report referential integrity.
        #[arg(long)]
        audit: bool,
    },
    /// Score synthetic candidates against the real data.
    Evaluate {
        #[command(flatten)]
        real: RealPair,
        /// Parent and child tables of one synthetic candidate; repeat for more.
        #[arg(long, num_args = 2, value_names = ["PARENT", "CHILD"], action = clap::ArgAction::Append, required = true)]
        synth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        skip_efficacy: bool,
        #[arg(long, default_value_t = mlsynth::efficacy::DEFAULT_FOLDS)]
        folds: usize,
    },
    /// Repair cluster-level inconsistencies of a flat synthetic table.
    Clca {
        #[command(flatten)]
        real: RealPair,
        /// Flat synthetic table.
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Alignment weights and search strategy (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split numeric child columns into within-cluster and cluster-mean parts.
    Decompose {
        #[command(flatten)]
        real: RealPair,
        /// Child columns to split (default: every numeric child column).
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Undo a decomposition.
    Recompose {
        #[command(flatten)]
        real: RealPair,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset from a generator spec.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a simulation study design.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the design's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a base design and its variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the base design's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    tool_version: String,
    seed: Option<u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<InputDigest>,
}

struct Output {
    dir: PathBuf,
    written: Vec<InputDigest>,
}

impl Output {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(InputDigest {
            role: name.to_string(),
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn dataset(&mut self, d: &MultilevelDataset) -> anyhow::Result<()> {
        let mut parent = Vec::new();
        write_parent(d, &mut parent, b',')?;
        let mut child = Vec::new();
        write_child(d, &mut child, b',')?;
        self.write("schema.json", d.schema().to_json().as_bytes())?;
        self.write("parent.csv", &parent)?;
        self.write("child.csv", &child)
    }

    fn finish(mut self, command: &str, seed: Option<u64>, inputs: Vec<InputDigest>) -> anyhow::Result<()> {
        let manifest = Manifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            inputs,
            outputs: std::mem::take(&mut self.written),
        };
        self.write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())
    }
}

fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    Ok(serde_json::to_string_pretty(value)?.into_bytes())
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = read_text(path)?;
    Ok(serde_json::from_str(&text).map_err(mlsynth::Error::from)?)
}

fn digests(items: &[(&str, &Path)]) -> anyhow::Result<Vec<InputDigest>> {
    Ok(items.iter().map(|(role, p)| digest_file(role, p)).collect::<mlsynth::Result<_>>()?)
}

impl RealPair {
    fn load(&self) -> anyhow::Result<MultilevelDataset> {
        let schema = MultilevelSchema::from_path(&self.schema)?;
        Ok(load_dataset(&self.real[0], &self.real[1], &schema, LoadOptions::default())?)
    }

    fn digests(&self) -> anyhow::Result<Vec<InputDigest>> {
        digests(&[
            ("schema", &self.schema),
            ("real_parent", &self.real[0]),
            ("real_child", &self.real[1]),
        ])
    }
}

fn cmd_validate(schema: &Path, real: &[PathBuf], flat: Option<&Path>, audit: bool) -> anyhow::Result<()> {
    let schema = MultilevelSchema::from_path(schema)?;
    let d = match flat {
        Some(path) => split_tables(&load_flat(path, &schema, b',', false)?)?,
        None => {
            let opts = if audit {
                LoadOptions::default().audit()
            } else {
                LoadOptions::default()
            };
            load_dataset(&real[0], &real[1], &schema, opts)?
        }
    };
    println!("parents: {}", d.n_clusters());
    println!("children: {}", d.n_children());
    if audit {
        let n = d.n_children();
        let orphans = d.orphan_count();
        let integrity = if n == 0 { 1.0 } else { 1.0 - orphans as f64 / n as f64 };
        println!("orphan children: {orphans}");
        println!("referential integrity: {integrity:.6}");
        if orphans > 0 {
            bail!(mlsynth::Error::Invalid(format!("{orphans} child rows have no matching parent")));
        }
    }
    println!("ok");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    real: &RealPair,
    synth: &[PathBuf],
    out: &Path,
    seed: u64,
    skip_efficacy: bool,
    folds: usize,
    workers: Option<usize>,
) -> anyhow::Result<()> {
    let real_data = real.load()?;
    let mut inputs = real.digests()?;
    let mut candidates = Vec::new();
    for (i, pair) in synth.chunks(2).enumerate() {
        candidates.push(load_dataset(&pair[0], &pair[1], real_data.schema(), LoadOptions::default())?);
        inputs.extend(digests(&[
            (&format!("synth_parent_{i}"), &pair[0]),
            (&format!("synth_child_{i}"), &pair[1]),
        ])?);
    }
    let opts = EvaluationOptions {
        skip_efficacy,
        folds,
        seed,
    };
    let mut report = with_workers(workers, || evaluate(&real_data, &candidates, &opts))??;
    report.inputs = inputs.clone();

    let mut plots: Vec<PlotSeries> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        for mut s in marginal_plot_data(&real_data, c) {
            if candidates.len() > 1 {
                s.name = format!("candidate{i}:{}", s.name);
            }
            plots.push(s);
        }
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;

    let mut o = Output::new(out)?;
    o.write("report.json", report.to_json().as_bytes())?;
    o.write("report.csv", &csv)?;
    o.write("plot_data.json", &json_bytes(&plots)?)?;
    o.finish("evaluate", Some(seed), inputs)?;
    println!("within {:.4} ({:?})", report.overall.within.value, report.overall.within.category);
    println!("between {:.4} ({:?})", report.overall.between.value, report.overall.between.category);
    if let Some(e) = &report.overall.efficacy {
        println!("efficacy {:.4} ({:?})", e.value, e.category);
    }
    Ok(())
}

fn cmd_clca(real: &RealPair, synth: &Path, out: &Path, seed: u64, config: Option<&Path>) -> anyhow::Result<()> {
    let real_data = real.load()?;
    let opts: ClcaOptions = match config {
        Some(p) => parse_json(p)?,
        None => ClcaOptions::default(),
    };
    let flat = load_flat(synth, real_data.schema(), b',', false)?;
    let (repaired, audit) = clca_apply(&flat, &real_data, &opts, seed)?;
    let mut inputs = real.digests()?;
    inputs.extend(digests(&[("synth_flat", synth)])?);
    if let Some(p) = config {
        inputs.extend(digests(&[("config", p)])?);
    }
    let mut o = Output::new(out)?;
    o.dataset(&repaired)?;
    o.write("audit.json", &json_bytes(&audit)?)?;
    o.finish("clca", Some(seed), inputs)?;
    println!(
        "repaired {} clusters across {} parent columns",
        audit.clusters,
        audit.columns.len()
    );
    Ok(())
}

fn cmd_decompose(real: &RealPair, columns: &[String], out: &Path) -> anyhow::Result<()> {
    let d = real.load()?;
    let names: Vec<String> = if columns.is_empty() {
        d.child_column_names()
            .into_iter()
            .filter(|c| d.child_column(c).is_some_and(|c| c.as_numeric().is_some()))
            .collect()
    } else {
        columns.to_vec()
    };
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let split = decompose(&d, &refs)?;
    let mut o = Output::new(out)?;
    o.dataset(split.dataset())?;
    o.finish("decompose", None, real.digests()?)?;
    println!("decomposed {}", names.join(", "));
    Ok(())
}

fn cmd_recompose(real: &RealPair, out: &Path) -> anyhow::Result<()> {
    let d = DecomposedDataset::from_dataset(real.load()?)?;
    let joined = recompose(&d)?;
    let mut o = Output::new(out)?;
    o.dataset(&joined)?;
    o.finish("recompose", None, real.digests()?)?;
    println!("recomposed {}", d.columns().join(", "));
    Ok(())
}

/// A data source plus the number of clusters to draw.
#[derive(Deserialize)]
struct GenerateConfig {
    source: SourceSpec,
    #[serde(default)]
    clusters: Option<usize>,
}

fn cmd_generate(config: &Path, out: &Path, seed: u64) -> anyhow::Result<()> {
    let cfg: GenerateConfig = parse_json(config)?;
    let clusters = match (&cfg.source, cfg.clusters) {
        (_, Some(j)) => j,
        (SourceSpec::Hierarchical { spec }, None) => spec.clusters,
        (SourceSpec::Afshartous { spec }, None) => spec.clusters,
        _ => bail!(mlsynth::Error::Invalid("`clusters` is required for this source".into())),
    };
    let base = config.parent().unwrap_or(Path::new("."));
    let source = cfg.source.resolve(base)?;
    let d = source.draw(clusters, seed)?;
    let mut o = Output::new(out)?;
    o.dataset(&d)?;
    o.finish("generate", Some(seed), digests(&[("config", config)])?)?;
    println!("generated {} clusters, {} children", d.n_clusters(), d.n_children());
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> anyhow::Result<()> {
    let mut design = StudyDesign::from_json(&read_text(config)?)?;
    if let Some(s) = seed {
        design.master_seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let source = design.source.resolve(base)?;
    let output = run_design(&design, source, workers)?;
    let mut log = Vec::new();
    write_log(&output.log, &mut log)?;
    let mut o = Output::new(out)?;
    o.write("result.json", output.result.to_json().as_bytes())?;
    o.write("replications.csv", &log)?;
    o.write("plot_data.json", &json_bytes(&study_plot_data(&output.result))?)?;
    if let Some(truth) = &output.truth {
        o.write("truth.json", truth.to_json().as_bytes())?;
    }
    o.finish("simulate", Some(design.master_seed), digests(&[("config", config)])?)?;
    println!(
        "{} conditions x {} replications, {} cells",
        output.result.conditions.len(),
        output.result.replications,
        output.result.cells.len()
    );
    Ok(())
}

fn cmd_ablate(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> anyhow::Result<()> {
    let mut ablation: AblationDesign = parse_json(config)?;
    if let Some(s) = seed {
        ablation.base.master_seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let report = run_ablation(&ablation, base, workers)?;
    let mut o = Output::new(out)?;
    o.write("ablation.json", &json_bytes(&report)?)?;
    o.finish("ablate", Some(ablation.base.master_seed), digests(&[("config", config)])?)?;
    for v in &report.variants {
        let changed = v.deltas.iter().filter(|d| d.delta.is_some_and(|x| x != 0.0)).count();
        println!("{}: {} of {} cells changed", v.name, changed, v.deltas.len());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Validate {
            schema,
            real,
            flat,
            audit,
        } => cmd_validate(&schema, &real, flat.as_deref(), audit),
        Command::Evaluate {
            real,
            synth,
            out,
            seed,
            skip_efficacy,
            folds,
        } => cmd_evaluate(&real, &synth, &out, seed, skip_efficacy, folds, workers),
        Command::Clca {
            real,
            synth,
            out,
            seed,
            config,
        } => with_workers(workers, || cmd_clca(&real, &synth, &out, seed, config.as_deref()))?,
        Command::Decompose { real, columns, out } => cmd_decompose(&real, &columns, &out),
        Command::Recompose { real, out } => cmd_recompose(&real, &out),
        Command::Generate { config, out, seed } => cmd_generate(&config, &out, seed),
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed, workers),
        Command::Ablate { config, out, seed } => cmd_ablate(&config, &out, seed, workers),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<mlsynth::Error>() {
                Some(err) if err.is_validation() => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
