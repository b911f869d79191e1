//! Batched building blocks of the interest-extraction half of the model.
//!
//! Every function takes a batch of `B` rows. Histories are flattened to
//! `B·L` rows, with `L` the padded sequence length.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::model::BiInteractionForm;
use crate::tensor::Tensor;

/// Field pooling: row `i` is the sum of the embedding rows in `bags[i]`.
pub fn embed_field(tape: &mut Tape, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
    if let Some(i) = bags.iter().position(Vec::is_empty) {
        return Err(Error::Data {
            index: i,
            reason: "field has no categorical ids".into(),
        });
    }
    tape.gather_sum(table, bags)
}

/// Item-attention parameters for one history domain.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `W_j`, shape `[d × 4d]`.
    pub w: Var,
    /// `h_j`, shape `[d]`.
    pub h: Var,
}

/// Attention-pooled history.
///
/// `history` holds `B·L` rows of width `d`, `mask` marks the real
/// (non-padding) positions. Scores are `h_jᵀ ReLU(W_j [r ‖ q ‖ p ‖ r ⊙ q])`;
/// with `params = None` every unmasked position gets equal weight. Rows whose
/// history is entirely masked aggregate to the zero vector.
///
/// Returns the aggregate `[B × d]` and the weights `[B × L]`.
pub fn sequence_aggregate(
    tape: &mut Tape,
    history: Var,
    mask: &[bool],
    q: Var,
    p: Var,
    params: Option<AttentionVars>,
) -> Result<(Var, Var)> {
    let (b, d) = tape.value(q).dims2()?;
    let (bl, dh) = tape.value(history).dims2()?;
    if dh != d || bl % b != 0 || mask.len() != bl || tape.value(p).dims2()? != (b, d) {
        return Err(dim_err("sequence_aggregate", tape.value(history).shape(), &[b, d]));
    }
    let len = bl / b;
    let weights = match params {
        Some(att) => {
            let qr = tape.repeat_rows(q, len)?;
            let pr = tape.repeat_rows(p, len)?;
            let rq = tape.mul(history, qr)?;
            let x = tape.concat(&[history, qr, pr, rq])?;
            let wt = tape.transpose(att.w)?;
            let hidden = tape.matmul(x, wt)?;
            let hidden = tape.relu(hidden);
            let h_col = tape.reshape(att.h, &[d, 1])?;
            let scores = tape.matmul(hidden, h_col)?;
            let scores = tape.reshape(scores, &[b, len])?;
            tape.masked_softmax_rows(scores, mask)?
        }
        None => {
            let mut w = vec![0.0; bl];
            for i in 0..b {
                let row = &mask[i * len..(i + 1) * len];
                let count = row.iter().filter(|&&m| m).count();
                if count > 0 {
                    for (t, &m) in row.iter().enumerate() {
                        if m {
                            w[i * len + t] = 1.0 / count as f64;
                        }
                    }
                }
            }
            tape.constant(Tensor::new(vec![b, len], w)?)
        }
    };
    let aggregate = tape.segment_weighted_sum(weights, history)?;
    Ok((aggregate, weights))
}

/// Interest-attention parameters, indexed `[u, s, t]`.
#[derive(Clone, Copy, Debug)]
pub struct InterestVars {
    /// `V_*`, shape `[d × 4d]`.
    pub v: [Var; 3],
    /// `g_*`, shape `[d]`.
    pub g: [Var; 3],
    /// `b_*`, shape `[1]`.
    pub b: [Var; 3],
}

/// Output of [`interest_attention_concat`].
#[derive(Clone, Copy, Debug)]
pub struct InterestOutput {
    /// `[B × 4d]` weighted concatenation.
    pub m: Var,
    /// `(v_u, v_s, v_t)`, each `[B × 1]`; `None` for the equal-weight concat.
    pub weights: Option<[Var; 3]>,
}

/// `m = [q ‖ v_u·p ‖ v_t·a ‖ v_s·b]` with
/// `v_* = exp(g_*ᵀ ReLU(V_* [q ‖ p ‖ a ‖ b]) + b_*)`.
///
/// With `params = None` the plain concatenation `[q ‖ p ‖ a ‖ b]` is returned.
pub fn interest_attention_concat(
    tape: &mut Tape,
    q: Var,
    p: Var,
    a: Var,
    b: Var,
    params: Option<InterestVars>,
) -> Result<InterestOutput> {
    let (_, d) = tape.value(q).dims2()?;
    let plain = tape.concat(&[q, p, a, b])?;
    let Some(iv) = params else {
        return Ok(InterestOutput {
            m: plain,
            weights: None,
        });
    };
    let mut weights = [plain; 3];
    for k in 0..3 {
        let vt = tape.transpose(iv.v[k])?;
        let hidden = tape.matmul(plain, vt)?;
        let hidden = tape.relu(hidden);
        let g_col = tape.reshape(iv.g[k], &[d, 1])?;
        let logit = tape.matmul(hidden, g_col)?;
        let logit = tape.add_row(logit, iv.b[k])?;
        weights[k] = tape.exp(logit);
    }
    let [v_u, v_s, v_t] = weights;
    let wp = tape.scale_rows(p, v_u)?;
    let wa = tape.scale_rows(a, v_t)?;
    let wb = tape.scale_rows(b, v_s)?;
    let m = tape.concat(&[q, wp, wa, wb])?;
    Ok(InterestOutput {
        m,
        weights: Some(weights),
    })
}

/// Second-order crossing of the four `d`-wide blocks of `m`, each scaled by
/// its coefficient in `c` (shape `[4]`). Output is `[B × d]`.
pub fn bi_interaction(
    tape: &mut Tape,
    m: Var,
    c: Var,
    d: usize,
    form: BiInteractionForm,
) -> Result<Var> {
    let (_, width) = tape.value(m).dims2()?;
    if width != 4 * d || tape.value(c).numel() != 4 {
        return Err(dim_err("bi_interaction", tape.value(m).shape(), &[4 * d]));
    }
    let mut scaled = Vec::with_capacity(4);
    for k in 0..4 {
        let block = tape.slice_cols(m, k * d, d)?;
        let ck = tape.slice_cols(c, k, 1)?;
        scaled.push(tape.scale_by(block, ck)?);
    }
    match form {
        BiInteractionForm::SquareOfSum => {
            let mut sum = scaled[0];
            let mut sum_sq = tape.mul(scaled[0], scaled[0])?;
            for &s in &scaled[1..] {
                sum = tape.add(sum, s)?;
                let sq = tape.mul(s, s)?;
                sum_sq = tape.add(sum_sq, sq)?;
            }
            let sq_sum = tape.mul(sum, sum)?;
            let diff = tape.sub(sq_sum, sum_sq)?;
            Ok(tape.scale(diff, 0.5))
        }
        BiInteractionForm::Pairwise => {
            let mut acc: Option<Var> = None;
            for i in 0..4 {
                for j in i + 1..4 {
                    let prod = tape.mul(scaled[i], scaled[j])?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, prod)?,
                        None => prod,
                    });
                }
            }
            Ok(acc.expect("four blocks give six pairs"))
        }
    }
}

/// Fully connected stack: ReLU after every layer except the last.
/// An empty stack is the identity.
pub fn dnn_forward(tape: &mut Tape, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.linear(h, w, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
