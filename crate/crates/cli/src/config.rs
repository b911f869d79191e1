//! Run configuration: a preset, overlaid by an optional TOML file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dadin::data::{DomainPaths, MoonsConfig, Schema};
use dadin::experiments::pipeline::LAMBDA_GRID;
use dadin::experiments::{ExperimentConfig, ToyStudyConfig};
use dadin::model::VariantConfig;
use dadin::optim::OptimizerKind;
use serde::{Deserialize, Serialize};

/// Where the two domain logs live. `dir` supplies defaults for the three
/// files (`target.csv`, `source.csv`, `schema.toml`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Skip malformed rows instead of failing.
    pub skip_bad_rows: bool,
}

impl DataConfig {
    fn resolve(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
        match (explicit, &self.dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(file)),
            (None, None) => bail!("no input data: pass --data-dir or set [data] dir in the config file"),
        }
    }

    pub fn paths(&self) -> Result<(DomainPaths, Schema)> {
        let paths = DomainPaths {
            target: self.resolve(&self.target, "target.csv")?,
            source: self.resolve(&self.source, "source.csv")?,
        };
        let schema_path = self.resolve(&self.schema, "schema.toml")?;
        for p in [&paths.target, &paths.source, &schema_path] {
            if !p.is_file() {
                bail!("input file {} does not exist", p.display());
            }
        }
        let schema = Schema::load(&schema_path).with_context(|| format!("reading schema {}", schema_path.display()))?;
        Ok((paths, schema))
    }

    /// Makes every path absolute so a snapshot replays from any directory.
    fn absolutize(&mut self) -> Result<()> {
        for p in [&mut self.dir, &mut self.target, &mut self.source, &mut self.schema]
            .into_iter()
            .flatten()
        {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
        }
        Ok(())
    }
}

/// Everything a command reads. Serialized verbatim as the snapshot
/// `config.toml` beside each command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Named model variant, one of DADIN1..DADIN9 or DADIN++.
    pub variant: String,
    pub data: DataConfig,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub toy: ToyStudyConfig,
    /// Variants trained by `ablate`.
    pub ablation_variants: Vec<String>,
    /// `(λ2, λ3)` settings visited by `loss-curves`.
    pub lambda_grid: Vec<(f64, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_experiment(ExperimentConfig::default())
    }
}

impl RunConfig {
    fn with_experiment(experiment: ExperimentConfig) -> Self {
        Self {
            variant: "DADIN++".into(),
            data: DataConfig::default(),
            experiment,
            toy: ToyStudyConfig::default(),
            ablation_variants: VariantConfig::NAMES.iter().map(|s| s.to_string()).collect(),
            lambda_grid: LAMBDA_GRID.to_vec(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size hyperparameters (d = 64, batches of 2000, Adam at 1e-4).
    #[default]
    Full,
    /// Small model and unit-scale training for the bundled fixture.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Flags shared by every subcommand. Each one overrides the matching
/// config-file key.
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML config file layered over the preset.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub preset: Option<Preset>,
    /// Output directory (created if missing).
    #[arg(long, short = 'o', global = true, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Directory holding target.csv, source.csv and schema.toml.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub target: Option<PathBuf>,
    #[arg(long, global = true)]
    pub source: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub lambda1: Option<f64>,
    #[arg(long, global = true)]
    pub lambda2: Option<f64>,
    #[arg(long, global = true)]
    pub lambda3: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Routing threshold T of the intra-class classifiers.
    #[arg(long = "threshold-t", global = true)]
    pub threshold_t: Option<f64>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub seqlen: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr", global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum, global = true)]
    pub optimizer: Option<Optimizer>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub max_grad_norm: Option<f64>,
    /// Share of target users assigned to training.
    #[arg(long, global = true)]
    pub a_train: Option<f64>,
    /// Share of training users whose last-day target records are held out.
    #[arg(long, global = true)]
    pub a_cross: Option<f64>,
    #[arg(long, global = true)]
    pub skip_bad_rows: bool,
}

/// Overlays `top` onto `base`, descending into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_layered(preset: Preset, file: Option<&Path>) -> Result<RunConfig> {
    let base = match preset {
        Preset::Full => RunConfig::default(),
        Preset::Desk => RunConfig::with_experiment(ExperimentConfig::desk_scale()),
    };
    let Some(path) = file else { return Ok(base) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let top: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let mut table = toml::Table::try_from(&base)?;
    merge(&mut table, top);
    table
        .try_into()
        .with_context(|| format!("invalid config {}", path.display()))
}

fn set<T>(slot: &mut T, flag: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

impl CommonArgs {
    /// The fully layered, validated configuration.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = read_layered(self.preset.unwrap_or_default(), self.config.as_deref())?;
        let d = &mut cfg.data;
        for (slot, flag) in [
            (&mut d.dir, &self.data_dir),
            (&mut d.target, &self.target),
            (&mut d.source, &self.source),
            (&mut d.schema, &self.schema),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        d.skip_bad_rows |= self.skip_bad_rows;
        d.absolutize()?;

        set(&mut cfg.variant, &self.variant);
        let e = &mut cfg.experiment;
        set(&mut e.seeds, &self.seeds);
        for w in [&mut e.weights, &mut cfg.toy.weights] {
            set(&mut w.lambda1, &self.lambda1);
            set(&mut w.lambda2, &self.lambda2);
            set(&mut w.lambda3, &self.lambda3);
            set(&mut w.alpha, &self.alpha);
        }
        set(&mut e.model.threshold, &self.threshold_t);
        set(&mut cfg.toy.model.head.threshold, &self.threshold_t);
        set(&mut e.model.embed_dim, &self.embed_dim);
        set(&mut e.model.seqlen, &self.seqlen);
        set(&mut e.model.dropout, &self.dropout);
        for t in [&mut e.train, &mut cfg.toy.train] {
            set(&mut t.epochs, &self.epochs);
            set(&mut t.batch_size, &self.batch_size);
            set(&mut t.learning_rate, &self.learning_rate);
            set(&mut t.patience, &self.patience);
            if let Some(m) = self.max_grad_norm {
                t.max_grad_norm = Some(m);
            }
            if let Some(o) = self.optimizer {
                t.optimizer = match o {
                    Optimizer::Adam => OptimizerKind::Adam,
                    Optimizer::Sgd => OptimizerKind::Sgd,
                };
            }
        }
        set(&mut e.split.a_train, &self.a_train);
        set(&mut e.split.a_cross, &self.a_cross);

        e.model.variant = VariantConfig::named(&cfg.variant)?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }
}

/// Moons settings for the toy study with the rotation overridden.
pub fn moons_with_rotation(base: MoonsConfig, degrees: Option<f64>) -> MoonsConfig {
    MoonsConfig {
        rotation_degrees: degrees.unwrap_or(base.rotation_degrees),
        ..base
    }
}
