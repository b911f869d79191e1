//! Domain-agnostic layer, click predictor and domain classifiers.
//!
//! ```text
//! h_spec ──► h_DA = ReLU(W_DA h_spec + b_DA) ──► Rev ──► D†  (global)
//!   │              │                  ŷ·h_DA ──► Rev ──► D¹  (ŷ ≥ T)
//!   │              │              (1−ŷ)·h_DA ──► Rev ──► D⁰  (ŷ < T)
//!   └──── + ◄──────┘
//!         h ──► FC(100) ─► Dropout ─► FC(1) ─► σ ─► ŷ
//! ```

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights};
use crate::model::BranchNormalizer;
use crate::params::{init_weight, Bound, ParamId, ParamStore, Partition};
use crate::tensor::Tensor;

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold T must lie in (0, 1), got {t}")))
    }
}

/// Intra-class branch for a predicted click probability: `1` when `ŷ ≥ T`.
pub fn route(y_hat: f64, threshold: f64) -> Result<u8> {
    check_threshold(threshold)?;
    Ok(u8::from(y_hat >= threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub dropout: f64,
    pub threshold: f64,
    pub detach_gate: bool,
    pub use_domain_agnostic_layer: bool,
    pub use_global_confusion: bool,
    pub use_intra_confusion: bool,
    pub branch_normalizer: BranchNormalizer,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            dropout: 0.5,
            threshold: 0.5,
            detach_gate: false,
            use_domain_agnostic_layer: true,
            use_global_confusion: true,
            use_intra_confusion: true,
            branch_normalizer: BranchNormalizer::PerBranch,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

impl Affine {
    fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        partition: Partition,
        out: usize,
        fan_in: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), partition, init_weight(rng, out, fan_in));
        let b = store.add(format!("{name}.b"), partition, Tensor::zeros(vec![out]));
        Self { w, b }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, bound.var(self.w), bound.var(self.b))
    }
}

/// Parameter handles of the adversarial half of the model.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialHead {
    domain_agnostic: Affine,
    predictor_hidden: Affine,
    predictor_out: Affine,
    global: Affine,
    intra1: Affine,
    intra0: Affine,
}

/// Tape handles produced by one forward pass through the head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub h_spec: Var,
    pub h_da: Var,
    pub h: Var,
    pub y_hat: Var,
    pub d_hat: Var,
    pub d_hat1: Var,
    pub d_hat0: Var,
}

impl AdversarialHead {
    /// Registers the head for representations of width `width`.
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        width: usize,
        predictor_hidden: usize,
    ) -> Self {
        Self {
            domain_agnostic: Affine::register(
                store,
                rng,
                "domain_agnostic",
                Partition::Feature,
                width,
                width,
            ),
            predictor_hidden: Affine::register(
                store,
                rng,
                "predictor.fc1",
                Partition::Label,
                predictor_hidden,
                width,
            ),
            predictor_out: Affine::register(
                store,
                rng,
                "predictor.fc2",
                Partition::Label,
                1,
                predictor_hidden,
            ),
            global: Affine::register(store, rng, "domain_global", Partition::GlobalDomain, 1, width),
            intra1: Affine::register(store, rng, "domain_intra1", Partition::IntraDomain1, 1, width),
            intra0: Affine::register(store, rng, "domain_intra0", Partition::IntraDomain0, 1, width),
        }
    }

    /// `h_DA = ReLU(W_DA h_spec + b_DA)` and `h = h_DA + h_spec`. With the
    /// layer disabled both equal `h_spec`.
    pub fn domain_agnostic(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h_spec: Var,
        enabled: bool,
    ) -> Result<(Var, Var)> {
        if !enabled {
            return Ok((h_spec, h_spec));
        }
        let pre = self.domain_agnostic.apply(tape, bound, h_spec)?;
        let h_da = tape.relu(pre);
        let h = tape.add(h_da, h_spec)?;
        Ok((h_da, h))
    }

    /// `ŷ = σ(W₂ Dropout(W₁ h + b₁) + b₂)`, shape `[B × 1]`.
    pub fn predict_ctr(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h: Var,
        dropout: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let h1 = self.predictor_hidden.apply(tape, bound, h)?;
        let h1 = tape.dropout(h1, dropout, training, rng)?;
        let logit = self.predictor_out.apply(tape, bound, h1)?;
        Ok(tape.sigmoid(logit))
    }

    /// `d̂ = σ(W₃ Rev(h_DA) + b₃)`.
    pub fn domain_classify_global(&self, tape: &mut Tape, bound: &Bound, h_da: Var) -> Result<Var> {
        let rev = tape.grad_reverse(h_da);
        let logit = self.global.apply(tape, bound, rev)?;
        Ok(tape.sigmoid(logit))
    }

    /// Both intra-class classifiers on every row:
    /// `d̂¹ = σ(W₄ Rev(ŷ·h_DA) + b₄)` and `d̂⁰ = σ(W₅ Rev((1 − ŷ)·h_DA) + b₅)`.
    /// Routing by `T` happens in the loss, where each row only counts
    /// toward its own branch.
    pub fn domain_classify_intra(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h_da: Var,
        y_hat: Var,
        detach_gate: bool,
    ) -> Result<(Var, Var)> {
        let gate = if detach_gate { tape.detach(y_hat) } else { y_hat };
        let (rows, _) = tape.value(gate).dims2()?;
        let ones = tape.constant(Tensor::ones(vec![rows, 1]));
        let gate = tape.reshape(gate, &[rows, 1])?;
        let not_gate = tape.sub(ones, gate)?;

        let pos = tape.scale_rows(h_da, gate)?;
        let pos = tape.grad_reverse(pos);
        let d1 = self.intra1.apply(tape, bound, pos)?;
        let d1 = tape.sigmoid(d1);

        let neg = tape.scale_rows(h_da, not_gate)?;
        let neg = tape.grad_reverse(neg);
        let d0 = self.intra0.apply(tape, bound, neg)?;
        let d0 = tape.sigmoid(d0);
        Ok((d1, d0))
    }

    /// Runs the whole head on `h_spec`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h_spec: Var,
        cfg: &HeadConfig,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<HeadVars> {
        check_threshold(cfg.threshold)?;
        let (h_da, h) = self.domain_agnostic(tape, bound, h_spec, cfg.use_domain_agnostic_layer)?;
        let d_hat = self.domain_classify_global(tape, bound, h_da)?;
        let y_hat = self.predict_ctr(tape, bound, h, cfg.dropout, training, rng)?;
        let (d_hat1, d_hat0) = self.domain_classify_intra(tape, bound, h_da, y_hat, cfg.detach_gate)?;
        Ok(HeadVars {
            h_spec,
            h_da,
            h,
            y_hat,
            d_hat,
            d_hat1,
            d_hat0,
        })
    }
}

/// Labels of a batch. Rows without a click label (unlabeled target points
/// in the toy study) still take part in the domain losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub y: Vec<Option<f64>>,
    pub d: Vec<f64>,
}

/// Captured per-batch results, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs {
    pub y_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// `1` when the row was routed to `D¹`.
    pub branch: Vec<u8>,
    /// Output of the classifier the row was routed to.
    pub d_hat_branch: Vec<f64>,
    pub h_spec: Tensor,
    pub h_da: Tensor,
    pub h: Tensor,
    /// `(v_u, v_s, v_t)` per row; all ones for the plain concatenation and
    /// absent for the toy model.
    pub interest_weights: Option<[Vec<f64>; 3]>,
    /// Target- and source-history attention weights, `[B × L]` each.
    pub history_weights: Option<[Tensor; 2]>,
}

/// A recorded forward pass, ready for [`Forward::objective`] and backward.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub bound: Bound,
    pub vars: HeadVars,
    pub outputs: ForwardOutputs,
    pub(crate) head_cfg: HeadConfig,
}

impl Forward {
    pub(crate) fn capture(
        tape: Tape,
        bound: Bound,
        vars: HeadVars,
        head_cfg: HeadConfig,
        interest_weights: Option<[Vec<f64>; 3]>,
        history_weights: Option<[Tensor; 2]>,
    ) -> Self {
        let y_hat = tape.value(vars.y_hat).data().to_vec();
        let d1 = tape.value(vars.d_hat1).data();
        let d0 = tape.value(vars.d_hat0).data();
        let branch: Vec<u8> = y_hat
            .iter()
            .map(|&y| u8::from(y >= head_cfg.threshold))
            .collect();
        let d_hat_branch = branch
            .iter()
            .enumerate()
            .map(|(i, &b)| if b == 1 { d1[i] } else { d0[i] })
            .collect();
        let outputs = ForwardOutputs {
            d_hat: tape.value(vars.d_hat).data().to_vec(),
            branch,
            d_hat_branch,
            h_spec: tape.value(vars.h_spec).clone(),
            h_da: tape.value(vars.h_da).clone(),
            h: tape.value(vars.h).clone(),
            y_hat,
            interest_weights,
            history_weights,
        };
        Self {
            tape,
            bound,
            vars,
            outputs,
            head_cfg,
        }
    }

    /// Records the weighted objective on the tape and returns it with its
    /// breakdown. Disabled confusion losses are still reported but carry a
    /// zero coefficient.
    pub fn objective(&mut self, targets: &Targets, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
        weights.validate()?;
        let n = self.outputs.y_hat.len();
        if targets.y.len() != n || targets.d.len() != n {
            return Err(Error::Contract(format!(
                "{n} predictions but {} labels / {} domain labels",
                targets.y.len(),
                targets.d.len()
            )));
        }
        let tape = &mut self.tape;
        let v = self.vars;
        let labeled: Vec<usize> = (0..n).filter(|&i| targets.y[i].is_some()).collect();
        if labeled.is_empty() {
            return Err(Error::Degenerate("batch has no click labels".into()));
        }
        let y: Vec<f64> = targets.y.iter().map(|y| y.unwrap_or(0.0)).collect();
        let all: Vec<usize> = (0..n).collect();
        let pos: Vec<usize> = (0..n).filter(|&i| self.outputs.branch[i] == 1).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| self.outputs.branch[i] == 0).collect();

        let l_y = tape.log_loss(v.y_hat, &y, &labeled)?;
        let l_g = tape.log_loss(v.d_hat, &targets.d, &all)?;
        let mut l1 = tape.log_loss(v.d_hat1, &targets.d, &pos)?;
        let mut l0 = tape.log_loss(v.d_hat0, &targets.d, &neg)?;
        if self.head_cfg.branch_normalizer == BranchNormalizer::Batch {
            l1 = tape.scale(l1, pos.len() as f64 / n as f64);
            l0 = tape.scale(l0, neg.len() as f64 / n as f64);
        }

        let [c1, mut c2, mut c3, mut c4] = weights.coefficients();
        if !self.head_cfg.use_global_confusion {
            c2 = 0.0;
        }
        if !self.head_cfg.use_intra_confusion {
            c3 = 0.0;
            c4 = 0.0;
        }
        let t1 = tape.scale(l_y, c1);
        let t2 = tape.scale(l_g, c2);
        let t3 = tape.scale(l0, c3);
        let t4 = tape.scale(l1, c4);
        let total = tape.add(t1, t2)?;
        let total = tape.add(total, t3)?;
        let total = tape.add(total, t4)?;

        let item = |var: Var| tape.value(var).data()[0];
        let breakdown = LossBreakdown {
            l_y: item(l_y),
            l_d_global: item(l_g),
            l_d_intra0: item(l0),
            l_d_intra1: item(l1),
            total: item(total),
            rho: pos.len(),
            tau: neg.len(),
            n,
        };
        Ok((total, breakdown))
    }
}
