use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::OutDir;
use config::CommonArgs;

/// Cross-domain CTR experiments with domain-adversarial training.
#[derive(Parser)]
#[command(name = "dadin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Two-moons study: adversarial toy model against a plain network.
    Toy {
        /// Rotation of the target moons in degrees.
        #[arg(long)]
        rotation: Option<f64>,
        /// Points per side of the decision-boundary grid (0 skips it).
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Ingest the logs and write split manifests plus the vocabulary.
    Resample,
    /// Train one variant, save a checkpoint and evaluate it.
    Train {
        /// Directory with split.json and vocab.json from `resample`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train every listed variant over the seed list and tabulate.
    Ablate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated variant names (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// One training run per (lambda2, lambda3) setting, logging every loss term.
    LossCurves {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Settings as `l2:l3` pairs separated by commas, e.g. `1:1,0.5:1`.
        #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
        grid: Option<Vec<(f64, f64)>>,
    },
    /// 2-D PCA of the representation before and after the domain-agnostic layer.
    ExportPca {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Project only the test split instead of every record. The test
        /// split holds no source rows, so the cross-domain distances are
        /// undefined there.
        #[arg(long)]
        test_only: bool,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected l2:l3, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.common.resolve()?;
    match &cli.command {
        Command::Toy { rotation, grid } => {
            cfg.toy.moons = config::moons_with_rotation(cfg.toy.moons, *rotation);
            if let Some(g) = grid {
                cfg.toy.grid_resolution = *g;
            }
        }
        Command::Ablate { variants: Some(v), .. } => cfg.ablation_variants = v.clone(),
        Command::LossCurves { grid: Some(g), .. } => cfg.lambda_grid = g.clone(),
        _ => {}
    }
    let out = OutDir::create(&cli.common.out, &cfg)?;
    match &cli.command {
        Command::Toy { .. } => commands::toy(&cfg, &out, &cfg.toy),
        Command::Resample => commands::resample(&cfg, &out),
        Command::Train { manifest } => commands::train(&cfg, &out, manifest.as_deref()),
        Command::Eval { checkpoint, manifest } => commands::eval(&cfg, &out, checkpoint, manifest.as_deref()),
        Command::Ablate { manifest, .. } => commands::ablate(&cfg, &out, manifest.as_deref()),
        Command::LossCurves { manifest, .. } => commands::loss_curves(&cfg, &out, manifest.as_deref()),
        Command::ExportPca { checkpoint, manifest, test_only } => {
            commands::export_pca(&cfg, &out, checkpoint, manifest.as_deref(), *test_only)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
