//! Cross-entropy terms and their weighted combination.
//!
//! The objective is
//!
//! ```text
//! L = λ1·L_y + λ2·L_d† + λ3·(α·L_d⁰ + (1 − α)·L_d¹)
//! ```
//!
//! where every component is a mean binary cross-entropy with the usual
//! leading minus sign.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Mean of `−[y ln p + (1 − y) ln(1 − p)]` with clamped `p`.
///
/// Shared by the training loss and the evaluation metric so the two agree
/// bit for bit. Callers guarantee equal, nonzero lengths.
pub(crate) fn mean_log_loss(probs: &[f64], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    total / probs.len() as f64
}

fn checked_mean_log_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(dim_err("log loss", &[probs.len()], &[labels.len()]));
    }
    if probs.is_empty() {
        return Err(Error::Degenerate("cross-entropy over an empty batch".into()));
    }
    Ok(mean_log_loss(probs, labels))
}

/// Click-prediction loss `L_y`.
pub fn ctr_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    checked_mean_log_loss(y_hat, y)
}

/// Global domain-confusion loss `L_d†`; target-domain instances carry `d = 1`.
pub fn global_confusion_loss(d_hat: &[f64], d: &[f64]) -> Result<f64> {
    checked_mean_log_loss(d_hat, d)
}

/// Intra-class losses `(L_d⁰, L_d¹)` over the instances routed to each
/// branch. An empty branch contributes zero.
pub fn intra_class_losses(
    d_hat0: &[f64],
    d0: &[f64],
    d_hat1: &[f64],
    d1: &[f64],
) -> Result<(f64, f64)> {
    let branch = |p: &[f64], y: &[f64]| {
        if p.is_empty() && y.is_empty() {
            Ok(0.0)
        } else {
            checked_mean_log_loss(p, y)
        }
    };
    Ok((branch(d_hat0, d0)?, branch(d_hat1, d1)?))
}

/// `λ1..λ3` and the intra-class balance `α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            alpha: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative real, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Coefficients applied to `(L_y, L_d†, L_d⁰, L_d¹)`.
    pub fn coefficients(&self) -> [f64; 4] {
        [
            self.lambda1,
            self.lambda2,
            self.lambda3 * self.alpha,
            self.lambda3 * (1.0 - self.alpha),
        ]
    }
}

/// Per-iteration record of every loss component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_y: f64,
    pub l_d_global: f64,
    pub l_d_intra0: f64,
    pub l_d_intra1: f64,
    pub total: f64,
    /// Instances routed to the positive branch.
    pub rho: usize,
    /// Instances routed to the negative branch.
    pub tau: usize,
    pub n: usize,
}

impl LossBreakdown {
    /// The weighted intra-class term `α·L_d⁰ + (1 − α)·L_d¹`.
    pub fn intra(&self, alpha: f64) -> f64 {
        alpha * self.l_d_intra0 + (1.0 - alpha) * self.l_d_intra1
    }
}

/// Fills in `total` from the four components.
pub fn total_loss(parts: &LossBreakdown, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let [c1, c2, c3, c4] = w.coefficients();
    let total =
        c1 * parts.l_y + c2 * parts.l_d_global + c3 * parts.l_d_intra0 + c4 * parts.l_d_intra1;
    Ok(LossBreakdown { total, ..*parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn ctr_loss_examples() {
        assert!(ctr_loss(&[1.0 - PROB_EPS], &[1.0]).unwrap() < 1e-11);
        assert!((ctr_loss(&[0.5], &[1.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!((ctr_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!(matches!(ctr_loss(&[], &[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        let l = ctr_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(l.is_finite());
        // 1 − (1 − ε) is not exactly ε in floating point.
        let want = (-PROB_EPS.ln() - (1.0 - (1.0 - PROB_EPS)).ln()) / 2.0;
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn global_confusion_examples() {
        assert!((global_confusion_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!(global_confusion_loss(&[1.0 - PROB_EPS], &[1.0]).unwrap() < 1e-11);
        let want = (-(0.9f64.ln()) - 0.9f64.ln() - 0.5f64.ln()) / 3.0;
        let got = global_confusion_loss(&[0.9, 0.1, 0.5], &[1.0, 0.0, 0.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn intra_class_examples() {
        let (l0, l1) = intra_class_losses(&[0.5, 0.5], &[1.0, 0.0], &[], &[]).unwrap();
        assert_eq!(l1, 0.0);
        assert!((l0 - LN_2).abs() < 1e-15);

        let (_, l1) = intra_class_losses(&[], &[], &[0.8, 0.3], &[1.0, 1.0]).unwrap();
        let want = -(0.8f64.ln() + 0.3f64.ln()) / 2.0;
        assert!((l1 - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let parts = LossBreakdown {
            l_y: LN_2,
            l_d_global: LN_2,
            l_d_intra0: LN_2,
            l_d_intra1: LN_2,
            ..Default::default()
        };
        let out = total_loss(&parts, &LossWeights::default()).unwrap();
        assert!((out.total - 3.0 * LN_2).abs() < 1e-15);

        let w = LossWeights {
            lambda1: 2.0,
            lambda2: 0.0,
            lambda3: 0.0,
            alpha: 0.5,
        };
        let parts = LossBreakdown {
            l_y: 0.3,
            l_d_global: 5.0,
            l_d_intra0: 7.0,
            l_d_intra1: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(&parts, &w).unwrap().total, 0.6);

        let w = LossWeights {
            alpha: 1.0,
            ..Default::default()
        };
        let out = total_loss(&parts, &w).unwrap();
        assert_eq!(out.total, 0.3 + 5.0 + 7.0);
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = LossWeights {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda2: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
