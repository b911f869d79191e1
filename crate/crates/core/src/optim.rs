//! Plain SGD and bias-corrected Adam over a [`ParamStore`].
//!
//! Both updates descend every partition along its own gradient. The
//! adversarial sign on the feature extractor is already inside the gradient
//! (it arrives through gradient reversal), and the `α`/`1 − α` weighting of
//! the intra-class classifiers comes from the loss coefficients, so nothing
//! here is partition specific.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn check_shapes(params: &ParamStore, grads: &Gradients) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradient buffers for {} parameters",
            grads.0.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if p.value.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient for `{}` has shape {:?}, parameter has {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}

/// `θ ← θ − μ·∇θ` for every parameter.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, learning_rate: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        for (v, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
            *v -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Optimizer kind, hyperparameters and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Ok(Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }

    /// Applies one update of the configured kind.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Sgd => {
                sgd_step(params, grads, self.config.learning_rate)?;
                self.step += 1;
                Ok(())
            }
            OptimizerKind::Adam => adam_step(params, grads, self),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract("optimizer state does not match the parameters".into()));
    }
    let OptimizerConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        eps,
        ..
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if m.shape() != p.value.shape() {
            return Err(Error::Contract(format!("moment buffer for `{}` has the wrong shape", p.name)));
        }
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, (x, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
