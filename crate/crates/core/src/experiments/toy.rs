//! The two-moons study: an adversarial toy model against a plain network of
//! identical shape trained on the same points.

use serde::{Deserialize, Serialize};

use crate::data::{generate_moons, Domain, MoonsConfig, MoonsData};
use crate::error::Result;
use crate::loss::LossWeights;
use crate::metrics;
use crate::model::{ToyConfig, ToyModel, ToyPoint};
use crate::optim::OptimizerKind;
use crate::pca::{projection_report, ProjectionReport};
use crate::tensor::Tensor;
use crate::train::{self, predict_all, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyStudyConfig {
    pub moons: MoonsConfig,
    pub model: ToyConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    /// Points per side of the decision-boundary grid; 0 skips the grid.
    pub grid_resolution: usize,
}

impl Default for ToyStudyConfig {
    fn default() -> Self {
        Self {
            moons: MoonsConfig::default(),
            model: ToyConfig::default(),
            train: TrainConfig {
                batch_size: 64,
                epochs: 100,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                patience: 5,
                eval_every: 1,
                seed: 0,
                max_grad_norm: None,
            },
            weights: LossWeights::default(),
            grid_resolution: 200,
        }
    }
}

/// Click scores of both models over a regular grid, row-major with `y`
/// varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub baseline: Vec<f64>,
}

impl BoundaryGrid {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("x\ty\tadversarial\tbaseline\n");
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                let k = j * self.xs.len() + i;
                out.push_str(&format!("{x}\t{y}\t{}\t{}\n", self.adversarial[k], self.baseline[k]));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyStudyResult {
    pub seed: u64,
    /// Accuracy on all target points, adversarial model.
    pub adversarial_accuracy: f64,
    /// Accuracy on all target points, plain network.
    pub baseline_accuracy: f64,
    /// Accuracy of the trained global domain classifier on every point.
    pub domain_accuracy: f64,
    pub parameter_count: usize,
    pub projection: ProjectionReport,
    pub grid: Option<BoundaryGrid>,
    pub adversarial_log: TrainReport,
    pub baseline_log: TrainReport,
}

/// Weights of the plain network: the same objective without the domain terms.
pub fn baseline_weights(w: &LossWeights) -> LossWeights {
    LossWeights {
        lambda2: 0.0,
        lambda3: 0.0,
        ..*w
    }
}

fn grid_axes(points: &[ToyPoint], n: usize) -> (Vec<f64>, Vec<f64>) {
    let axis = |k: usize| {
        let lo = points.iter().map(|p| p.x[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.x[k]).fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.2 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
            .collect::<Vec<f64>>()
    };
    (axis(0), axis(1))
}

fn scores(model: &ToyModel, points: &[ToyPoint]) -> Result<Vec<f64>> {
    train::predict_scores(model, points, 4096)
}

fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let cols = parts[0].dims2()?.1;
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::matrix(data.len() / cols, cols, data)
}

/// Runs the study for one seed (moons, initialisation and shuffling).
pub fn run_toy_study(cfg: &ToyStudyConfig, seed: u64) -> Result<ToyStudyResult> {
    let moons = MoonsConfig { seed, ..cfg.moons };
    let data: MoonsData = generate_moons(&moons)?;
    let train_cfg = TrainConfig { seed, ..cfg.train };
    let training = data.training_points();

    let mut adversarial = ToyModel::new(cfg.model.clone(), seed)?;
    let adversarial_log = train::train(&mut adversarial, &training, &[], &train_cfg, &cfg.weights)?;
    let mut baseline = ToyModel::new(cfg.model.clone(), seed)?;
    let baseline_log = train::train(&mut baseline, &training, &[], &train_cfg, &baseline_weights(&cfg.weights))?;

    let target = data.target_eval();
    let threshold = cfg.model.head.threshold;
    let adversarial_accuracy = train::accuracy(&adversarial, &target, threshold)?;
    let baseline_accuracy = train::accuracy(&baseline, &target, threshold)?;

    let mut everything = data.source.clone();
    everything.extend_from_slice(&target);
    let outs = predict_all(&adversarial, &everything, 4096)?;
    let d_hat: Vec<f64> = outs.iter().flat_map(|o| o.d_hat.iter().copied()).collect();
    let d: Vec<f64> = everything.iter().map(|p| p.domain.label()).collect();
    let domain_accuracy = metrics::accuracy(&d_hat, &d, 0.5)?;

    let h_spec = stack(&outs.iter().map(|o| o.h_spec.clone()).collect::<Vec<_>>())?;
    let h_da = stack(&outs.iter().map(|o| o.h_da.clone()).collect::<Vec<_>>())?;
    let domains: Vec<Domain> = everything.iter().map(|p| p.domain).collect();
    let labels: Vec<f64> = everything.iter().map(|p| p.label.unwrap_or(0.0)).collect();
    let projection = projection_report(&h_spec, &h_da, &domains, &labels)?;

    let grid = if cfg.grid_resolution > 0 {
        let (xs, ys) = grid_axes(&everything, cfg.grid_resolution);
        let mesh: Vec<ToyPoint> = ys
            .iter()
            .flat_map(|&y| {
                xs.iter().map(move |&x| ToyPoint {
                    x: [x, y],
                    label: None,
                    domain: Domain::Target,
                })
            })
            .collect();
        Some(BoundaryGrid {
            adversarial: scores(&adversarial, &mesh)?,
            baseline: scores(&baseline, &mesh)?,
            xs,
            ys,
        })
    } else {
        None
    };

    Ok(ToyStudyResult {
        seed,
        adversarial_accuracy,
        baseline_accuracy,
        domain_accuracy,
        parameter_count: adversarial.params().num_scalars(),
        projection,
        grid,
        adversarial_log,
        baseline_log,
    })
}
