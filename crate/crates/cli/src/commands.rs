//! One function per subcommand. Each writes a config snapshot plus its own
//! artifacts into the output directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dadin::checkpoint::{load_checkpoint, save_checkpoint};
use dadin::data::{build_histories, ingest_csv, IngestOptions, Split, SplitSpec, Vocabulary};
use dadin::experiments::pipeline::{
    evaluate_model, export_projection, prepare, run_ablation, run_loss_curves, train_model, EvalReport, Prepared,
};
use dadin::experiments::{run_toy_study, ToyStudyConfig};
use dadin::model::Dadin;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Split record ids plus what is needed to check a replay against them.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub spec: SplitSpec,
    pub seqlen: usize,
    pub n_records: usize,
    pub split: Split,
}

pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// The output directory of one command.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let out = Self(path.to_path_buf());
        out.write("config.toml", cfg.to_toml()?)?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }
}

fn header(cfg: &RunConfig) {
    let w = &cfg.experiment.weights;
    let m = &cfg.experiment.model;
    println!(
        "variant {} | lambda1 {} lambda2 {} lambda3 {} alpha {} | T {} | d {} seqlen {}",
        cfg.variant, w.lambda1, w.lambda2, w.lambda3, w.alpha, m.threshold, m.embed_dim, m.seqlen
    );
}

fn ingest_options(cfg: &RunConfig) -> IngestOptions {
    IngestOptions {
        skip_bad_rows: cfg.data.skip_bad_rows,
    }
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.experiment.seeds[0]
}

/// A prepared log and the seed its split was drawn with.
struct Data {
    prepared: Prepared,
    seed: u64,
}

/// Ingests and resamples afresh, or replays the split stored in `manifest`.
fn load_data(cfg: &RunConfig, manifest: Option<&Path>) -> Result<Data> {
    let (paths, schema) = cfg.data.paths()?;
    let Some(dir) = manifest else {
        let e = &cfg.experiment;
        let seed = first_seed(cfg);
        let prepared = prepare(&paths, &schema, ingest_options(cfg), &e.split, e.model.seqlen, seed)?;
        return Ok(Data { prepared, seed });
    };
    let split_path = dir.join(SPLIT_FILE);
    let stored: SplitManifest = serde_json::from_reader(
        fs::File::open(&split_path).with_context(|| format!("opening split manifest {}", split_path.display()))?,
    )
    .with_context(|| format!("parsing {}", split_path.display()))?;
    let vocab_path = dir.join(VOCAB_FILE);
    let mut vocab = Vocabulary::read_json(
        fs::File::open(&vocab_path).with_context(|| format!("opening vocabulary {}", vocab_path.display()))?,
    )?;
    vocab.freeze();
    let log = ingest_csv(&paths, &schema, &mut vocab, ingest_options(cfg))?;
    ensure!(
        log.records.len() == stored.n_records,
        "the split manifest covers {} records but the data has {}",
        stored.n_records,
        log.records.len()
    );
    ensure!(
        stored.seqlen == cfg.experiment.model.seqlen,
        "the split manifest was built with seqlen {} but the config asks for {}",
        stored.seqlen,
        cfg.experiment.model.seqlen
    );
    Ok(Data {
        prepared: Prepared {
            instances: build_histories(&log, stored.seqlen),
            log,
            vocab,
            split: stored.split,
        },
        seed: stored.seed,
    })
}

fn write_split(out: &OutDir, cfg: &RunConfig, data: &Data) -> Result<()> {
    let prepared = &data.prepared;
    out.write_json(
        SPLIT_FILE,
        &SplitManifest {
            seed: data.seed,
            spec: cfg.experiment.split,
            seqlen: cfg.experiment.model.seqlen,
            n_records: prepared.instances.len(),
            split: prepared.split.clone(),
        },
    )?;
    let f = fs::File::create(out.path(VOCAB_FILE))?;
    prepared.vocab.write_json(BufWriter::new(f))?;
    Ok(())
}

fn print_eval(r: &EvalReport) {
    println!("test AUC {:.5} LogLoss {:.5} over {} rows", r.test.auc, r.test.logloss, r.n_test);
    match &r.cold_start {
        Some(c) => println!("cold-start AUC {:.5} LogLoss {:.5} over {} rows", c.auc, c.logloss, r.n_cold_start),
        None => println!("cold-start metrics undefined over {} rows", r.n_cold_start),
    }
}

pub fn toy(cfg: &RunConfig, out: &OutDir, toy: &ToyStudyConfig) -> Result<()> {
    let mut summary = String::from("seed\tadversarial_accuracy\tbaseline_accuracy\tdomain_accuracy\tparameters\n");
    for (k, &seed) in cfg.experiment.seeds.iter().enumerate() {
        let r = run_toy_study(toy, seed).with_context(|| format!("toy study with seed {seed}"))?;
        println!(
            "seed {seed}: target accuracy {:.4} adversarial vs {:.4} plain, domain classifier accuracy {:.4}",
            r.adversarial_accuracy, r.baseline_accuracy, r.domain_accuracy
        );
        summary.push_str(&format!(
            "{seed}\t{}\t{}\t{}\t{}\n",
            r.adversarial_accuracy, r.baseline_accuracy, r.domain_accuracy, r.parameter_count
        ));
        // Plot data for the first seed only.
        if k == 0 {
            if let Some(grid) = &r.grid {
                out.write("toy_boundary.tsv", grid.to_tsv())?;
            }
            out.write("toy_pca.tsv", r.projection.to_tsv())?;
            out.write("toy_adversarial_log.jsonl", r.adversarial_log.to_jsonl())?;
            out.write("toy_baseline_log.jsonl", r.baseline_log.to_jsonl())?;
        }
    }
    out.write("toy_summary.tsv", summary)?;
    Ok(())
}

pub fn resample(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let data = load_data(cfg, None)?;
    write_split(out, cfg, &data)?;
    let s = &data.prepared.split;
    println!(
        "train {} valid {} test {} records; {} cold-start users; {} overlap users",
        s.train.len(),
        s.valid.len(),
        s.test.len(),
        s.cold_start_users.len(),
        s.overlap_users.len()
    );
    if cfg.experiment.split.a_cross == 0.0 {
        println!("a_cross = 0: evaluation users are disjoint from target-domain training users");
    }
    for w in &s.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &OutDir, manifest: Option<&Path>) -> Result<()> {
    header(cfg);
    let data = load_data(cfg, manifest)?;
    write_split(out, cfg, &data)?;
    let prepared = data.prepared;
    let train_cfg = dadin::train::TrainConfig {
        seed: first_seed(cfg),
        ..cfg.experiment.train
    };
    let (model, report) = train_model(&prepared, &cfg.experiment.model, &train_cfg, &cfg.experiment.weights)?;
    out.write("train_log.jsonl", report.to_jsonl())?;
    save_checkpoint(&model, &out.path(CHECKPOINT_FILE))?;
    println!(
        "trained {} epochs ({} iterations), best validation AUC {}",
        report.epochs_run,
        report.iterations,
        report.best_valid_auc.map_or("n/a".into(), |a| format!("{a:.5}"))
    );
    let [_, _, test] = prepared.splits()?;
    let eval = evaluate_model(&model, &test, &prepared.split.cold_start_users)?;
    out.write_json("eval.json", &eval)?;
    print_eval(&eval);
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &OutDir, checkpoint: &Path, manifest: Option<&Path>) -> Result<()> {
    let model = read_model(checkpoint)?;
    let prepared = load_data(cfg, manifest)?.prepared;
    check_layout(&model, &prepared)?;
    let [_, _, test] = prepared.splits()?;
    let eval = evaluate_model(&model, &test, &prepared.split.cold_start_users)?;
    out.write_json("eval.json", &eval)?;
    print_eval(&eval);
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &OutDir, manifest: Option<&Path>) -> Result<()> {
    header(cfg);
    let e = &cfg.experiment;
    let prepared = load_data(cfg, manifest)?.prepared;
    let table = run_ablation(
        &prepared,
        &e.split,
        &e.model,
        &e.train,
        &e.weights,
        &cfg.ablation_variants,
        &e.seeds,
    )?;
    let tsv = table.to_tsv("DADIN++");
    print!("{tsv}");
    out.write("ablation.tsv", tsv)?;
    out.write_json("ablation.json", &table)?;
    Ok(())
}

pub fn loss_curves(cfg: &RunConfig, out: &OutDir, manifest: Option<&Path>) -> Result<()> {
    header(cfg);
    let e = &cfg.experiment;
    let prepared = load_data(cfg, manifest)?.prepared;
    let train_cfg = dadin::train::TrainConfig {
        seed: first_seed(cfg),
        ..e.train
    };
    let curves = run_loss_curves(&prepared, &e.model, &train_cfg, &e.weights, &cfg.lambda_grid)?;
    for c in &curves {
        let stem = c.file_stem();
        out.write(&format!("{stem}.tsv"), c.to_tsv())?;
        let steps: Vec<_> = c.report.steps().collect();
        if let (Some(first), Some(last)) = (steps.first(), steps.last()) {
            println!("{stem}: L_y {:.5} -> {:.5} over {} iterations", first.l_y, last.l_y, steps.len());
        }
    }
    Ok(())
}

pub fn export_pca(cfg: &RunConfig, out: &OutDir, checkpoint: &Path, manifest: Option<&Path>, test_only: bool) -> Result<()> {
    let model = read_model(checkpoint)?;
    let prepared = load_data(cfg, manifest)?.prepared;
    check_layout(&model, &prepared)?;
    let rows = if test_only {
        let [_, _, test] = prepared.splits()?;
        test
    } else {
        prepared.instances.clone()
    };
    let report = export_projection(&model, &rows)?;
    out.write("pca.tsv", report.to_tsv())?;
    let summary = serde_json::json!({
        "rows": rows.len(),
        "spec": {
            "explained": report.spec.projection.explained,
            "centroids": report.spec.centroids,
            "positive_distance": report.spec.positive_distance,
            "positive_distance_normalized": report.spec.positive_distance_normalized,
        },
        "da": {
            "explained": report.da.projection.explained,
            "centroids": report.da.centroids,
            "positive_distance": report.da.positive_distance,
            "positive_distance_normalized": report.da.positive_distance_normalized,
        },
    });
    out.write_json("pca_summary.json", &summary)?;
    println!(
        "positive-centroid distance {:.4} before and {:.4} after the domain-agnostic layer (normalized)",
        report.spec.positive_distance_normalized, report.da.positive_distance_normalized
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<Dadin> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_layout(model: &Dadin, prepared: &Prepared) -> Result<()> {
    if *model.layout() != prepared.layout() {
        bail!("the checkpoint was trained on a different feature layout than this data and vocabulary");
    }
    Ok(())
}
