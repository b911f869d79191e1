//! Toy-scale model for 2-D points: a small fully connected extractor in front
//! of the same adversarial head the full model uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::model::head::{AdversarialHead, Forward, ForwardOutputs, HeadConfig, Targets};
use crate::model::layers;
use crate::params::{init_weight, ParamId, ParamStore, Partition};
use crate::tensor::Tensor;

/// A labelled or unlabelled 2-D point from one domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint {
    pub x: [f64; 2],
    pub label: Option<f64>,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Extractor widths; the last one is the representation width.
    pub hidden: Vec<usize>,
    pub predictor_hidden: usize,
    pub head: HeadConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16, 8],
            predictor_hidden: 16,
            head: HeadConfig {
                dropout: 0.0,
                ..HeadConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    config: ToyConfig,
    params: ParamStore,
    extractor: Vec<(ParamId, ParamId)>,
    head: AdversarialHead,
}

impl ToyModel {
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        if config.hidden.is_empty() || config.hidden.contains(&0) || config.predictor_hidden == 0 {
            return Err(Error::Config("toy widths must be positive and nonempty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut extractor = Vec::new();
        let mut fan_in = 2;
        for (i, &width) in config.hidden.iter().enumerate() {
            let w = params.add(
                format!("extractor.{i}.w"),
                Partition::Feature,
                init_weight(&mut rng, width, fan_in),
            );
            let b = params.add(
                format!("extractor.{i}.b"),
                Partition::Feature,
                Tensor::zeros(vec![width]),
            );
            extractor.push((w, b));
            fan_in = width;
        }
        let head = AdversarialHead::register(&mut params, &mut rng, fan_in, config.predictor_hidden);
        Ok(Self {
            config,
            params,
            extractor,
            head,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, points: &[ToyPoint], training: bool, rng: &mut ChaCha8Rng) -> Result<Forward> {
        if points.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        let mut tape = crate::autodiff::Tape::new();
        let bound = self.params.bind(&mut tape);
        let xs: Vec<f64> = points.iter().flat_map(|p| p.x).collect();
        let x = tape.constant(Tensor::matrix(points.len(), 2, xs)?);
        let layers_vars: Vec<(Var, Var)> = self
            .extractor
            .iter()
            .map(|&(w, b)| (bound.var(w), bound.var(b)))
            .collect();
        let h_spec = layers::dnn_forward(&mut tape, x, &layers_vars)?;
        let vars = self
            .head
            .forward(&mut tape, &bound, h_spec, &self.config.head, training, rng)?;
        Ok(Forward::capture(tape, bound, vars, self.config.head, None, None))
    }

    pub fn predict(&self, points: &[ToyPoint]) -> Result<ForwardOutputs> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(points, false, &mut rng)?.outputs)
    }
}

impl Targets {
    pub fn from_points(points: &[ToyPoint]) -> Self {
        Self {
            y: points.iter().map(|p| p.label).collect(),
            d: points.iter().map(|p| p.domain.label()).collect(),
        }
    }
}
