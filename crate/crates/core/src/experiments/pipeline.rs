//! Ingest, resample, train and evaluate the full model, plus the ablation and
//! loss-curve sweeps built on top.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_histories, ingest_csv, resample, Domain, DomainPaths, IngestOptions, Instance, RawLog, Schema, Split,
    SplitSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::metrics::{self, AttentionSummary, MeanStd, MetricReport, Metrics, SeedMetrics};
use crate::model::{Dadin, ModelConfig, VariantConfig};
use crate::pca::{projection_report, ProjectionReport};
use crate::tensor::Tensor;
use crate::train::{self, predict_all, TrainConfig, TrainReport};

/// An ingested log with histories and a resampled split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub log: RawLog,
    pub vocab: Vocabulary,
    pub instances: Vec<Instance>,
    pub split: Split,
}

/// Reads the two domain files, builds histories and resamples with `seed`.
pub fn prepare(
    paths: &DomainPaths,
    schema: &Schema,
    options: IngestOptions,
    spec: &SplitSpec,
    seqlen: usize,
    seed: u64,
) -> Result<Prepared> {
    let mut vocab = Vocabulary::new();
    let log = ingest_csv(paths, schema, &mut vocab, options)?;
    vocab.freeze();
    Prepared::from_log(log, vocab, spec, seqlen, seed)
}

impl Prepared {
    pub fn from_log(log: RawLog, vocab: Vocabulary, spec: &SplitSpec, seqlen: usize, seed: u64) -> Result<Self> {
        let instances = build_histories(&log, seqlen);
        let split = resample(&instances, spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self {
            log,
            vocab,
            instances,
            split,
        })
    }

    /// Train, validation and test instances.
    pub fn splits(&self) -> Result<[Vec<Instance>; 3]> {
        self.split.select(&self.instances)
    }

    pub fn layout(&self) -> crate::model::FeatureLayout {
        self.log.feature_layout(&self.vocab)
    }

    /// Resamples the same log with another seed.
    pub fn reseeded(&self, spec: &SplitSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            split: resample(&self.instances, spec, &mut ChaCha8Rng::seed_from_u64(seed))?,
            ..self.clone()
        })
    }
}

/// Test-set metrics, overall and restricted to cold-start users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test: Metrics,
    pub cold_start: Option<Metrics>,
    pub n_test: usize,
    pub n_cold_start: usize,
    pub attention: Option<AttentionSummary>,
}

fn metrics_or_none(scores: &[f64], labels: &[f64]) -> Result<Option<Metrics>> {
    match Metrics::compute(scores, labels) {
        Ok(m) => Ok(Some(m)),
        Err(Error::UndefinedMetric(_) | Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate_model(model: &Dadin, test: &[Instance], cold_users: &BTreeSet<usize>) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data {
            index: 0,
            reason: "test split is empty".into(),
        });
    }
    let outs = predict_all(model, test, 4096)?;
    let scores: Vec<f64> = outs.iter().flat_map(|o| o.y_hat.iter().copied()).collect();
    let labels: Vec<f64> = test.iter().map(|i| i.y).collect();
    let test_metrics = Metrics::compute(&scores, &labels)?;
    let cold: Vec<usize> = (0..test.len()).filter(|&i| cold_users.contains(&test[i].user)).collect();
    let cold_scores: Vec<f64> = cold.iter().map(|&i| scores[i]).collect();
    let cold_labels: Vec<f64> = cold.iter().map(|&i| labels[i]).collect();
    let attention = if outs.iter().all(|o| o.interest_weights.is_some()) {
        let mut merged = outs[0].clone();
        let mut w: [Vec<f64>; 3] = [vec![], vec![], vec![]];
        for o in &outs {
            if let Some(ws) = &o.interest_weights {
                for k in 0..3 {
                    w[k].extend_from_slice(&ws[k]);
                }
            }
        }
        merged.interest_weights = Some(w);
        Some(metrics::attention_summary(&merged, &labels)?)
    } else {
        None
    };
    Ok(EvalReport {
        test: test_metrics,
        cold_start: metrics_or_none(&cold_scores, &cold_labels)?,
        n_test: test.len(),
        n_cold_start: cold.len(),
        attention,
    })
}

/// Trains a fresh model initialised from `train_cfg.seed`.
pub fn train_model(
    prepared: &Prepared,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<(Dadin, TrainReport)> {
    let [train_set, valid, _] = prepared.splits()?;
    let mut model = Dadin::new(model_cfg.clone(), prepared.layout(), train_cfg.seed)?;
    let report = train::train(&mut model, &train_set, &valid, train_cfg, weights)?;
    Ok((model, report))
}

/// Train then evaluate on the test split.
pub fn run_once(
    prepared: &Prepared,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<(Dadin, TrainReport, EvalReport)> {
    let (model, log) = train_model(prepared, model_cfg, train_cfg, weights)?;
    let [_, _, test] = prepared.splits()?;
    let eval = evaluate_model(&model, &test, &prepared.split.cold_start_users)?;
    Ok((model, log, eval))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricReport,
    pub cold_start_auc: Option<MeanStd>,
    /// Interest-weight means of the first seed's test pass.
    pub attention: Option<AttentionSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.eq_ignore_ascii_case(variant))
    }

    /// Tab-separated table with absolute and relative AUC change against
    /// `reference` (falling back to the first row).
    pub fn to_tsv(&self, reference: &str) -> String {
        let base = self.row(reference).or(self.rows.first()).map(|r| r.report.auc.mean);
        let mut out = String::from("variant\tauc_mean\tauc_std\tlogloss_mean\tlogloss_std\tauc_delta_abs\tauc_delta_rel_pct\n");
        for r in &self.rows {
            let (abs, rel) = base.map_or((f64::NAN, f64::NAN), |b| metrics::auc_improvement(b, r.report.auc.mean));
            out.push_str(&format!(
                "{}\t{:.5}\t{:.5}\t{:.5}\t{:.5}\t{:.5}\t{:.3}\n",
                r.variant, r.report.auc.mean, r.report.auc.std, r.report.logloss.mean, r.report.logloss.std, abs, rel
            ));
        }
        out
    }
}

/// Trains every named variant under identical seeds, data and settings.
/// Each seed resamples the split and seeds initialisation and shuffling.
pub fn run_ablation(
    prepared: &Prepared,
    spec: &SplitSpec,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
    variants: &[String],
    seeds: &[u64],
) -> Result<AblationTable> {
    let resolved = variants
        .iter()
        .map(|name| VariantConfig::named(name).map(|v| (name.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let per_seed: Vec<Prepared> = seeds.iter().map(|&s| prepared.reseeded(spec, s)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (name, variant) in resolved {
        let cfg = ModelConfig {
            variant,
            ..base.clone()
        };
        let mut runs = Vec::new();
        let mut cold = Vec::new();
        let mut attention = None;
        for (data, &seed) in per_seed.iter().zip(seeds) {
            let tc = TrainConfig { seed, ..*train_cfg };
            let (_, _, eval) = run_once(data, &cfg, &tc, weights).map_err(|e| Error::Seeded {
                seed,
                source: Box::new(e),
            })?;
            log::info!("{name} seed {seed}: test AUC {:.5}", eval.test.auc);
            if let Some(c) = eval.cold_start {
                cold.push(c.auc);
            }
            if attention.is_none() {
                attention = eval.attention.clone();
            }
            runs.push(SeedMetrics {
                seed,
                metrics: eval.test,
            });
        }
        rows.push(AblationRow {
            variant: name,
            report: MetricReport::from_runs(runs)?,
            cold_start_auc: if cold.is_empty() { None } else { Some(MeanStd::of(&cold)?) },
            attention,
        });
    }
    Ok(AblationTable { rows })
}

/// The four `(λ2, λ3)` settings of the loss study, with `λ1 = 1`.
pub const LAMBDA_GRID: [(f64, f64); 4] = [(1.0, 1.0), (0.5, 1.0), (1.0, 0.5), (0.5, 0.5)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub weights: LossWeights,
    pub report: TrainReport,
}

impl LossCurve {
    /// Per-iteration components as tab-separated text with a comment header
    /// naming the weights.
    pub fn to_tsv(&self) -> String {
        let w = &self.weights;
        let mut out = format!(
            "# lambda1={} lambda2={} lambda3={} alpha={}\niteration\tl_y\tl_d_global\tl_d_intra0\tl_d_intra1\ttotal\trho\ttau\n",
            w.lambda1, w.lambda2, w.lambda3, w.alpha
        );
        for (i, s) in self.report.steps().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                i + 1,
                s.l_y,
                s.l_d_global,
                s.l_d_intra0,
                s.l_d_intra1,
                s.total,
                s.rho,
                s.tau
            ));
        }
        out
    }

    /// File stem such as `loss_l2-0.5_l3-1`.
    pub fn file_stem(&self) -> String {
        format!("loss_l2-{}_l3-{}", self.weights.lambda2, self.weights.lambda3)
    }
}

/// One training run per `(λ2, λ3)` setting, recording every iteration.
pub fn run_loss_curves(
    prepared: &Prepared,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    base: &LossWeights,
    grid: &[(f64, f64)],
) -> Result<Vec<LossCurve>> {
    grid.iter()
        .map(|&(lambda2, lambda3)| {
            let weights = LossWeights {
                lambda2,
                lambda3,
                ..*base
            };
            let (_, report) = train_model(prepared, model_cfg, train_cfg, &weights)?;
            Ok(LossCurve { weights, report })
        })
        .collect()
}

/// PCA views of `h_spec` and `h_DA` for `instances`.
pub fn export_projection(model: &Dadin, instances: &[Instance]) -> Result<ProjectionReport> {
    let outs = predict_all(model, instances, 4096)?;
    let rows = |f: fn(&crate::model::ForwardOutputs) -> &Tensor| -> Result<Tensor> {
        let cols = f(&outs[0]).dims2()?.1;
        let data: Vec<f64> = outs.iter().flat_map(|o| f(o).data().iter().copied()).collect();
        Tensor::matrix(data.len() / cols, cols, data)
    };
    let h_spec = rows(|o| &o.h_spec)?;
    let h_da = rows(|o| &o.h_da)?;
    let domains: Vec<Domain> = instances.iter().map(|i| i.domain).collect();
    let labels: Vec<f64> = instances.iter().map(|i| i.y).collect();
    projection_report(&h_spec, &h_da, &domains, &labels)
}
