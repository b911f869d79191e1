//! Named model parameters grouped into the five optimisation partitions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which player of the saddle-point game owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Partition {
    /// θ_f: embeddings, attention, feature crossing, domain-agnostic layer.
    Feature,
    /// θ_y: label predictor.
    Label,
    /// θ_d†: global domain classifier.
    GlobalDomain,
    /// θ_d⁰: intra-class classifier for predicted negatives.
    IntraDomain0,
    /// θ_d¹: intra-class classifier for predicted positives.
    IntraDomain1,
}

impl Partition {
    pub const ALL: [Partition; 5] = [
        Partition::Feature,
        Partition::Label,
        Partition::GlobalDomain,
        Partition::IntraDomain0,
        Partition::IntraDomain1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Feature => "theta_f",
            Partition::Label => "theta_y",
            Partition::GlobalDomain => "theta_d_global",
            Partition::IntraDomain0 => "theta_d0",
            Partition::IntraDomain1 => "theta_d1",
        }
    }

    /// True for the three classifiers that see features through reversal.
    pub fn is_domain_classifier(self) -> bool {
        matches!(
            self,
            Partition::GlobalDomain | Partition::IntraDomain0 | Partition::IntraDomain1
        )
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Checkpoint(format!("unknown partition `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, partition: Partition, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            partition,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tracked leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        )
    }

    /// Reads gradients back after [`Tape::backward`]. Parameters that did not
    /// take part in the loss get a zero gradient.
    pub fn gradients(&self, tape: &Tape, bound: &Bound) -> Gradients {
        Gradients(
            self.params
                .iter()
                .zip(&bound.0)
                .map(|(p, &v)| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
                })
                .collect(),
        )
    }

    /// Flat copy of every value in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

/// Tape handles for a bound [`ParamStore`], in registration order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// One gradient tensor per parameter, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales in place so the global L2 norm is at most `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in &mut self.0 {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// Uniform `±1/√fan_in` for a `[out × in]` weight matrix.
pub fn init_weight<R: Rng + ?Sized>(rng: &mut R, out: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..out * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![out, fan_in], data).expect("shape matches buffer")
}

/// Normal(0, 0.01) rows for an embedding table.
pub fn init_embedding<R: Rng + ?Sized>(rng: &mut R, vocab: usize, dim: usize) -> Tensor {
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![vocab, dim], data).expect("shape matches buffer")
}
