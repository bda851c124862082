//! Message aggregators: collapse the `T + 1` per-node messages into one vector.
//!
//! Non-adaptive combiners (concat / mean / max) have no parameters. The gating
//! combiner scores each message with a shared vector `s` and sums with the raw
//! sigmoid gates (no renormalisation). The attention combiner scores message
//! `i` of node `v` as `q · tanh(m_vⁱ W₁ + r_v W₂)` and takes a softmax over `i`.
//!
//! Weight layout: `W₁` is `d × h_att`, `W₂` is `h_ref × h_att`, so projections
//! are right-multiplications of row vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::propagation::MessageSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageAggKind {
    Concat,
    MeanPool,
    MaxPool,
    Gating,
    Attention,
}

impl MessageAggKind {
    pub const ALL: [MessageAggKind; 5] = [
        MessageAggKind::Concat,
        MessageAggKind::MeanPool,
        MessageAggKind::MaxPool,
        MessageAggKind::Gating,
        MessageAggKind::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageAggKind::Concat => "concat",
            MessageAggKind::MeanPool => "mean_pool",
            MessageAggKind::MaxPool => "max_pool",
            MessageAggKind::Gating => "gating",
            MessageAggKind::Attention => "attention",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, MessageAggKind::Gating | MessageAggKind::Attention)
    }

    /// Width of the combined vector for messages of width `d` over `depth + 1` steps.
    pub fn output_width(self, d: usize, depth: usize) -> usize {
        match self {
            MessageAggKind::Concat => (depth + 1) * d,
            _ => d,
        }
    }
}

impl fmt::Display for MessageAggKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageAggKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MessageAggKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::input(format!(
                    "unknown message aggregator '{s}' (expected concat, mean_pool, max_pool, gating or attention)"
                ))
            })
    }
}

/// Per-node, per-step weights: softmax rows for attention, raw gates for gating.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub weights: Matrix,
}

impl AttentionWeights {
    /// Column means: the average weight each step receives.
    pub fn mean_per_step(&self) -> Vec<f64> {
        let n = self.weights.rows().max(1) as f64;
        self.weights.column_sums().into_iter().map(|s| s / n).collect()
    }
}

/// Concatenation, mean pooling or max pooling over steps.
/// Panics if called with an adaptive kind; use [`combine_gating`] / [`combine_attention`].
pub fn combine_nonadaptive(ms: &MessageSet, kind: MessageAggKind) -> Matrix {
    let steps = ms.steps();
    match kind {
        MessageAggKind::Concat => {
            let parts: Vec<&Matrix> = steps.iter().collect();
            Matrix::hcat(&parts)
        }
        MessageAggKind::MeanPool => {
            let mut acc = steps[0].clone();
            for m in &steps[1..] {
                acc.add_assign(m);
            }
            acc.scale(1.0 / steps.len() as f64);
            acc
        }
        MessageAggKind::MaxPool => {
            let mut acc = steps[0].clone();
            for m in &steps[1..] {
                for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *a = a.max(*b);
                }
            }
            acc
        }
        MessageAggKind::Gating | MessageAggKind::Attention => {
            panic!("combine_nonadaptive called with adaptive aggregator {kind}")
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c_v = Σ_i σ(s · m_vⁱ) m_vⁱ`.
pub fn combine_gating(ms: &MessageSet, s: &[f64]) -> Result<(Matrix, AttentionWeights)> {
    if s.len() != ms.dim() {
        return Err(Error::input(format!(
            "gating vector has length {} but messages have width {}",
            s.len(),
            ms.dim()
        )));
    }
    let n = ms.num_nodes();
    let steps = ms.steps();
    let mut gates = Matrix::zeros(n, steps.len());
    let mut out = Matrix::zeros(n, ms.dim());
    for v in 0..n {
        for (i, m) in steps.iter().enumerate() {
            let row = m.row(v);
            let g = sigmoid(dot(s, row));
            gates.set(v, i, g);
            for (o, x) in out.row_mut(v).iter_mut().zip(row) {
                *o += g * x;
            }
        }
    }
    Ok((out, AttentionWeights { weights: gates }))
}

/// Gradient of a scalar loss w.r.t. `s`, given `d_out = ∂L/∂c`.
pub(crate) fn gating_backward(ms: &MessageSet, gates: &AttentionWeights, d_out: &Matrix) -> Vec<f64> {
    let mut ds = vec![0.0; ms.dim()];
    for (i, m) in ms.steps().iter().enumerate() {
        for v in 0..ms.num_nodes() {
            let row = m.row(v);
            let g = gates.weights.get(v, i);
            let coef = dot(d_out.row(v), row) * g * (1.0 - g);
            if coef != 0.0 {
                for (a, x) in ds.iter_mut().zip(row) {
                    *a += coef * x;
                }
            }
        }
    }
    ds
}

/// Intermediates kept for the attention backward pass.
#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    /// `tanh(M_i W₁ + R W₂)` per step, each `N × h_att`.
    activations: Vec<Matrix>,
    pub(crate) weights: AttentionWeights,
}

/// Softmax-attention over steps with reference `r` (`N × h_ref`).
pub fn combine_attention(
    ms: &MessageSet,
    reference: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    q: &[f64],
) -> Result<(Matrix, AttentionWeights)> {
    let (out, cache) = attention_forward(ms, reference, w1, w2, q)?;
    Ok((out, cache.weights))
}

pub(crate) fn attention_forward(
    ms: &MessageSet,
    reference: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    q: &[f64],
) -> Result<(Matrix, AttentionCache)> {
    let n = ms.num_nodes();
    let d = ms.dim();
    let h_att = q.len();
    if w1.shape() != (d, h_att) {
        return Err(Error::input(format!(
            "W1 has shape {:?}, expected ({d}, {h_att})",
            w1.shape()
        )));
    }
    if reference.rows() != n {
        return Err(Error::input(format!(
            "reference has {} rows for {n} nodes",
            reference.rows()
        )));
    }
    if w2.shape() != (reference.cols(), h_att) {
        return Err(Error::input(format!(
            "W2 has shape {:?}, expected ({}, {h_att})",
            w2.shape(),
            reference.cols()
        )));
    }

    let steps = ms.steps();
    let ref_proj = reference.matmul(w2);
    let mut activations = Vec::with_capacity(steps.len());
    let mut scores = Matrix::zeros(n, steps.len());
    for (i, m) in steps.iter().enumerate() {
        let mut z = m.matmul(w1);
        z.add_assign(&ref_proj);
        z.map_inplace(f64::tanh);
        for v in 0..n {
            scores.set(v, i, dot(q, z.row(v)));
        }
        activations.push(z);
    }
    if !scores.is_finite() {
        return Err(Error::numeric("attention scores are not finite"));
    }

    let weights = softmax_rows(&scores);
    let mut out = Matrix::zeros(n, d);
    for v in 0..n {
        for (i, m) in steps.iter().enumerate() {
            let w = weights.get(v, i);
            for (o, x) in out.row_mut(v).iter_mut().zip(m.row(v)) {
                *o += w * x;
            }
        }
    }
    Ok((
        out,
        AttentionCache {
            activations,
            weights: AttentionWeights { weights },
        },
    ))
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for v in 0..out.rows() {
        let row = out.row_mut(v);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

pub(crate) struct AttentionGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub q: Vec<f64>,
    pub reference: Matrix,
}

pub(crate) fn attention_backward(
    ms: &MessageSet,
    reference: &Matrix,
    w2: &Matrix,
    q: &[f64],
    cache: &AttentionCache,
    d_out: &Matrix,
) -> AttentionGrads {
    let n = ms.num_nodes();
    let steps = ms.steps();
    let h_att = q.len();
    let w = &cache.weights.weights;

    // ∂L/∂score via the softmax Jacobian
    let mut d_scores = Matrix::zeros(n, steps.len());
    for v in 0..n {
        let g = d_out.row(v);
        let dw: Vec<f64> = steps.iter().map(|m| dot(g, m.row(v))).collect();
        let mean: f64 = dw.iter().enumerate().map(|(i, x)| w.get(v, i) * x).sum();
        for (i, x) in dw.iter().enumerate() {
            d_scores.set(v, i, w.get(v, i) * (x - mean));
        }
    }

    let mut dq = vec![0.0; h_att];
    let mut dz_sum = Matrix::zeros(n, h_att);
    let mut dw1 = Matrix::zeros(ms.dim(), h_att);
    for (i, m) in steps.iter().enumerate() {
        let a = &cache.activations[i];
        let mut dz = Matrix::zeros(n, h_att);
        for v in 0..n {
            let ds = d_scores.get(v, i);
            let arow = a.row(v);
            for k in 0..h_att {
                dq[k] += ds * arow[k];
            }
            for ((o, &qk), &ak) in dz.row_mut(v).iter_mut().zip(q).zip(arow) {
                *o = ds * qk * (1.0 - ak * ak);
            }
        }
        dw1.add_assign(&m.t_matmul(&dz));
        dz_sum.add_assign(&dz);
    }
    AttentionGrads {
        w1: dw1,
        w2: reference.t_matmul(&dz_sum),
        q: dq,
        reference: dz_sum.matmul_t(w2),
    }
}
