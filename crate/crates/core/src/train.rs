//! Minibatch training with early stopping on validation AUC.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights};
use crate::metrics::{self, Metrics};
use crate::model::{Dadin, Forward, ForwardOutputs, Targets, ToyModel, ToyPoint};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::params::ParamStore;

/// A model the trainer can drive.
pub trait Trainable {
    type Example: Clone;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, batch: &[Self::Example], training: bool, rng: &mut ChaCha8Rng) -> Result<Forward>;
    fn targets(batch: &[Self::Example]) -> Targets;
    fn label(example: &Self::Example) -> Option<f64>;
}

impl Trainable for Dadin {
    type Example = Instance;

    fn params(&self) -> &ParamStore {
        Dadin::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        Dadin::params_mut(self)
    }
    fn forward(&self, batch: &[Instance], training: bool, rng: &mut ChaCha8Rng) -> Result<Forward> {
        Dadin::forward(self, batch, training, rng)
    }
    fn targets(batch: &[Instance]) -> Targets {
        Targets::from_instances(batch)
    }
    fn label(example: &Instance) -> Option<f64> {
        Some(example.y)
    }
}

impl Trainable for ToyModel {
    type Example = ToyPoint;

    fn params(&self) -> &ParamStore {
        ToyModel::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        ToyModel::params_mut(self)
    }
    fn forward(&self, batch: &[ToyPoint], training: bool, rng: &mut ChaCha8Rng) -> Result<Forward> {
        ToyModel::forward(self, batch, training, rng)
    }
    fn targets(batch: &[ToyPoint]) -> Targets {
        Targets::from_points(batch)
    }
    fn label(example: &ToyPoint) -> Option<f64> {
        example.label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Evaluations without improvement tolerated before stopping.
    pub patience: usize,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    pub seed: u64,
    /// Rescale gradients whose global norm exceeds this value.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2000,
            epochs: 20,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            patience: 5,
            eval_every: 1,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, epochs and eval_every must be positive".into()));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            ..OptimizerConfig::default()
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        iteration: usize,
        epoch: usize,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Eval {
        iteration: usize,
        epoch: usize,
        valid_auc: Option<f64>,
        valid_logloss: Option<f64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<LogEntry>,
    pub epochs_run: usize,
    pub iterations: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_auc: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn steps(&self) -> impl Iterator<Item = &LossBreakdown> {
        self.log.iter().filter_map(|e| match e {
            LogEntry::Step { loss, .. } => Some(loss),
            LogEntry::Eval { .. } => None,
        })
    }

    /// The log as newline-delimited JSON.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for entry in &self.log {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

/// Inference-mode predictions in chunks of `chunk` examples.
pub fn predict_all<M: Trainable>(model: &M, examples: &[M::Example], chunk: usize) -> Result<Vec<ForwardOutputs>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    examples
        .chunks(chunk.max(1))
        .map(|c| model.forward(c, false, &mut rng).map(|f| f.outputs))
        .collect()
}

/// Click probabilities for `examples`.
pub fn predict_scores<M: Trainable>(model: &M, examples: &[M::Example], chunk: usize) -> Result<Vec<f64>> {
    Ok(predict_all(model, examples, chunk)?
        .into_iter()
        .flat_map(|o| o.y_hat)
        .collect())
}

/// AUC and LogLoss over the labeled examples.
pub fn evaluate<M: Trainable>(model: &M, examples: &[M::Example], chunk: usize) -> Result<Metrics> {
    let labeled: Vec<M::Example> = examples.iter().filter(|e| M::label(e).is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::UndefinedMetric("no labeled examples".into()));
    }
    let labels: Vec<f64> = labeled.iter().filter_map(M::label).collect();
    let scores = predict_scores(model, &labeled, chunk)?;
    Metrics::compute(&scores, &labels)
}

/// Trains `model` on `train`, evaluating on `valid` every `eval_every` epochs
/// and restoring the parameters with the best validation AUC. Without a
/// usable validation set the final parameters are kept.
pub fn train<M: Trainable>(
    model: &mut M,
    train: &[M::Example],
    valid: &[M::Example],
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainReport> {
    cfg.validate()?;
    weights.validate()?;
    if train.is_empty() {
        return Err(Error::Data {
            index: 0,
            reason: "training split is empty".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer_config(), model.params())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut iteration = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<M::Example> = idx.iter().map(|&i| train[i].clone()).collect();
            let targets = M::targets(&batch);
            if targets.y.iter().all(Option::is_none) {
                continue;
            }
            let mut fwd = model.forward(&batch, true, &mut rng)?;
            let (loss, breakdown) = fwd.objective(&targets, weights)?;
            iteration += 1;
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    value: breakdown.total,
                });
            }
            fwd.tape.backward(loss)?;
            let mut grads = model.params().gradients(&fwd.tape, &fwd.bound);
            if let Some(m) = cfg.max_grad_norm {
                grads.clip(m);
            }
            opt.apply(model.params_mut(), &grads)?;
            report.log.push(LogEntry::Step {
                iteration,
                epoch,
                loss: breakdown,
            });
        }
        report.epochs_run = epoch;

        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let (auc, ll) = match evaluate(model, valid, cfg.batch_size) {
            Ok(m) => (Some(m.auc), Some(m.logloss)),
            Err(Error::UndefinedMetric(_)) => (None, None),
            Err(e) => return Err(e),
        };
        report.log.push(LogEntry::Eval {
            iteration,
            epoch,
            valid_auc: auc,
            valid_logloss: ll,
        });
        let Some(auc) = auc else { continue };
        log::info!("epoch {epoch}: validation AUC {auc:.5}");
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, model.params().clone()));
            report.best_epoch = Some(epoch);
            report.best_valid_auc = Some(auc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.iterations = iteration;
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(report)
}

/// Training-set loss breakdown of one inference-mode pass (no dropout), used
/// to compare objectives before and after updates.
pub fn batch_objective<M: Trainable>(model: &M, batch: &[M::Example], weights: &LossWeights) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut fwd = model.forward(batch, false, &mut rng)?;
    Ok(fwd.objective(&M::targets(batch), weights)?.1)
}

/// Accuracy of the click predictor on labeled examples.
pub fn accuracy<M: Trainable>(model: &M, examples: &[M::Example], threshold: f64) -> Result<f64> {
    let labeled: Vec<M::Example> = examples.iter().filter(|e| M::label(e).is_some()).cloned().collect();
    let labels: Vec<f64> = labeled.iter().filter_map(M::label).collect();
    let scores = predict_scores(model, &labeled, 4096)?;
    metrics::accuracy(&scores, &labels, threshold)
}
