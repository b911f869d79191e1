//! AUC, LogLoss, multi-seed aggregation and interest-attention summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::mean_log_loss;
use crate::model::ForwardOutputs;

fn check_inputs(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(crate::error::dim_err("metric", &[scores.len()], &[labels.len()]));
    }
    if let Some(i) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data {
            index: i,
            reason: format!("label {} is not 0 or 1", labels[i]),
        });
    }
    Ok(())
}

/// Area under the ROC curve: the share of (positive, negative) pairs where
/// the positive scores higher, ties counting one half.
///
/// Runs in `O(n log n)`. Pair credits are accumulated as exact integers (in
/// units of one half) so the result equals a brute-force pair count bit for
/// bit.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Data {
            index: i,
            reason: "score is NaN".into(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1.0 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        doubled += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean binary cross-entropy with the same clamping as the training loss.
pub fn logloss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Degenerate("logloss of an empty set".into()));
    }
    Ok(mean_log_loss(scores, labels))
}

/// Share of predictions on the correct side of `threshold`.
pub fn accuracy(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == (y == 1.0))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Metrics of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[f64]) -> Result<Self> {
        let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
        Ok(Self {
            auc: auc(scores, labels)?,
            logloss: logloss(scores, labels)?,
            n_pos,
            n_neg: labels.len() - n_pos,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("mean of no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: Metrics,
}

/// Per-seed metrics with their mean and spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_seed: Vec<SeedMetrics>,
    pub auc: MeanStd,
    pub logloss: MeanStd,
}

impl MetricReport {
    pub fn from_runs(per_seed: Vec<SeedMetrics>) -> Result<Self> {
        let aucs: Vec<f64> = per_seed.iter().map(|s| s.metrics.auc).collect();
        let lls: Vec<f64> = per_seed.iter().map(|s| s.metrics.logloss).collect();
        Ok(Self {
            auc: MeanStd::of(&aucs)?,
            logloss: MeanStd::of(&lls)?,
            per_seed,
        })
    }
}

/// Runs `runner` once per seed, in the given order, and aggregates. A failing
/// run is reported with its seed.
pub fn repeat_experiment<F>(seeds: &[u64], mut runner: F) -> Result<MetricReport>
where
    F: FnMut(u64) -> Result<Metrics>,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            runner(seed)
                .map(|metrics| SeedMetrics { seed, metrics })
                .map_err(|e| Error::Seeded {
                    seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_runs(per_seed)
}

/// Absolute and relative (percent) AUC gain of `new` over `base`.
pub fn auc_improvement(base: f64, new: f64) -> (f64, f64) {
    (new - base, 100.0 * (new - base) / base)
}

/// Mean interest-attention weights `[v_u, v_s, v_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub overall: [f64; 3],
    pub positive: Option<[f64; 3]>,
    pub negative: Option<[f64; 3]>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Per-class and overall means of the captured interest weights.
pub fn attention_summary(outputs: &ForwardOutputs, labels: &[f64]) -> Result<AttentionSummary> {
    let weights = outputs
        .interest_weights
        .as_ref()
        .ok_or_else(|| Error::NotApplicable("interest attention is disabled for this model".into()))?;
    check_inputs(&weights[0], labels)?;
    if labels.is_empty() {
        return Err(Error::Degenerate("no instances to summarize".into()));
    }
    let mean_where = |keep: &dyn Fn(f64) -> bool| -> Option<[f64; 3]> {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| keep(labels[i])).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some([0, 1, 2].map(|k| rows.iter().map(|&i| weights[k][i]).sum::<f64>() / n))
    };
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    Ok(AttentionSummary {
        overall: mean_where(&|_| true).expect("nonempty"),
        positive: mean_where(&|y| y == 1.0),
        negative: mean_where(&|y| y == 0.0),
        n_pos,
        n_neg: labels.len() - n_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn outputs_with(weights: Option<[Vec<f64>; 3]>) -> ForwardOutputs {
        let n = weights.as_ref().map_or(1, |w| w[0].len());
        ForwardOutputs {
            y_hat: vec![0.5; n],
            d_hat: vec![0.5; n],
            branch: vec![1; n],
            d_hat_branch: vec![0.5; n],
            h_spec: Tensor::zeros(vec![n, 1]),
            h_da: Tensor::zeros(vec![n, 1]),
            h: Tensor::zeros(vec![n, 1]),
            interest_weights: weights,
            history_weights: None,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.4], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.3, 0.5], &[1.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn logloss_examples() {
        assert!((logloss(&[0.5; 3], &[1.0, 0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logloss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
    }

    #[test]
    fn repeat_examples() {
        let m = |auc| Metrics {
            auc,
            logloss: 0.1,
            n_pos: 1,
            n_neg: 1,
        };
        let r = repeat_experiment(&[3], |_| Ok(m(0.7))).unwrap();
        assert_eq!(r.auc.std, 0.0);
        let r = repeat_experiment(&(0..10).collect::<Vec<_>>(), |_| Ok(m(0.6))).unwrap();
        assert!((r.auc.mean - 0.6).abs() < 1e-15);
        assert!(r.auc.std < 1e-15);
        let r = repeat_experiment(&[1, 2], |s| Ok(m(if s == 1 { 0.7 } else { 0.8 }))).unwrap();
        assert!((r.auc.mean - 0.75).abs() < 1e-15);
        assert!((r.auc.std - 0.05).abs() < 1e-15);
        let err = repeat_experiment(&[9], |_| Err(Error::Degenerate("x".into()))).unwrap_err();
        assert!(matches!(err, Error::Seeded { seed: 9, .. }));
    }

    #[test]
    fn attention_summary_examples() {
        let s = attention_summary(&outputs_with(Some([vec![1.0], vec![1.0], vec![1.0]])), &[1.0]).unwrap();
        assert_eq!(s.overall, [1.0; 3]);
        assert_eq!(s.negative, None);
        let s = attention_summary(
            &outputs_with(Some([vec![2.0, 4.0], vec![1.0, 3.0], vec![0.5, 0.25]])),
            &[1.0, 0.0],
        )
        .unwrap();
        assert_eq!(s.overall, [3.0, 2.0, 0.375]);
        assert_eq!(s.positive, Some([2.0, 1.0, 0.5]));
        assert_eq!(s.negative, Some([4.0, 3.0, 0.25]));
        assert!(matches!(
            attention_summary(&outputs_with(None), &[1.0]),
            Err(Error::NotApplicable(_))
        ));
    }
}
