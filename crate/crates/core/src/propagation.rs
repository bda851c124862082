//! Graph aggregators as sparse operators, and T-step feature propagation.
//!
//! Every operator is stored as its own CSR of coefficients. One output row is
//! produced by [`PropagationOperator::step_row`], which walks the row's entries
//! in ascending neighbour order; both [`propagate`] and the batched pipeline
//! call it, so their results agree bit for bit.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{augmented_degrees, count_edge_triangles, validate, CsrGraph};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `D̃^{-1/2} Ã D̃^{-1/2}`
    AugNormAdj,
    /// `D̃^{-1} Ã`
    RandomWalk,
    /// `α·m⁰ + (1−α)·D̃^{-1/2} Ã D̃^{-1/2} m^{t−1}`
    Ppr,
    /// Row-normalised triangle-count adjacency.
    Triangle,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::AugNormAdj,
        OperatorKind::RandomWalk,
        OperatorKind::Ppr,
        OperatorKind::Triangle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::AugNormAdj => "aug_norm_adj",
            OperatorKind::RandomWalk => "random_walk",
            OperatorKind::Ppr => "ppr",
            OperatorKind::Triangle => "triangle",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::input(format!(
                    "unknown graph aggregator '{s}' (expected aug_norm_adj, random_walk, ppr or triangle)"
                ))
            })
    }
}

#[derive(Clone, Debug)]
pub struct PropagationOperator {
    kind: OperatorKind,
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    coeffs: Vec<f64>,
    restart_alpha: Option<f64>,
}

pub fn make_operator(
    g: &CsrGraph,
    kind: OperatorKind,
    restart_alpha: Option<f64>,
) -> Result<PropagationOperator> {
    let violations = validate(g);
    if let Some(v) = violations.first() {
        return Err(Error::contract(format!(
            "graph failed validation ({} violations, first: {v})",
            violations.len()
        )));
    }
    match (kind, restart_alpha) {
        (OperatorKind::Ppr, None) => {
            return Err(Error::input("the ppr aggregator needs a restart probability"))
        }
        (OperatorKind::Ppr, Some(a)) if !(a > 0.0 && a <= 1.0) => {
            return Err(Error::input(format!(
                "restart probability {a} is outside (0, 1]"
            )))
        }
        (OperatorKind::Ppr, Some(_)) => {}
        (_, Some(_)) => {
            return Err(Error::input(format!(
                "restart probability only applies to ppr, not {kind}"
            )))
        }
        (_, None) => {}
    }

    let n = g.num_nodes();
    match kind {
        OperatorKind::AugNormAdj | OperatorKind::Ppr | OperatorKind::RandomWalk => {
            let deg = augmented_degrees(g)?.values;
            let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
            let mut coeffs = Vec::with_capacity(g.nnz());
            for u in 0..n {
                for &w in g.neighbors(u) {
                    coeffs.push(if kind == OperatorKind::RandomWalk {
                        1.0 / deg[u]
                    } else {
                        inv_sqrt[u] * inv_sqrt[w]
                    });
                }
            }
            Ok(PropagationOperator {
                kind,
                num_nodes: n,
                row_offsets: g.row_offsets().to_vec(),
                col_indices: g.col_indices().to_vec(),
                coeffs,
                restart_alpha,
            })
        }
        OperatorKind::Triangle => {
            let tri = count_edge_triangles(g)?;
            let mut row_offsets = Vec::with_capacity(n + 1);
            let mut col_indices = Vec::new();
            let mut coeffs = Vec::new();
            row_offsets.push(0);
            for u in 0..n {
                let total = tri.node_totals[u];
                if total == 0.0 {
                    // no triangles through u: keep its own message
                    col_indices.push(u);
                    coeffs.push(1.0);
                } else {
                    for k in g.row_range(u) {
                        let w = tri.edge_weights[k];
                        if w > 0 {
                            col_indices.push(g.col_indices()[k]);
                            coeffs.push(w as f64 / total);
                        }
                    }
                }
                row_offsets.push(col_indices.len());
            }
            Ok(PropagationOperator {
                kind,
                num_nodes: n,
                row_offsets,
                col_indices,
                coeffs,
                restart_alpha: None,
            })
        }
    }
}

impl PropagationOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn restart_alpha(&self) -> Option<f64> {
        self.restart_alpha
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Stored coefficients; one neighbour-message read per entry per step.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// `(source node, coefficient)` pairs feeding row `v`, in summation order.
    pub fn row(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[v]..self.row_offsets[v + 1];
        self.col_indices[r.clone()]
            .iter()
            .copied()
            .zip(self.coeffs[r].iter().copied())
    }

    pub fn row_sources(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    /// Dense form of the linear part (without the PPR restart term).
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes, self.num_nodes);
        for v in 0..self.num_nodes {
            for (u, c) in self.row(v) {
                m.set(v, u, c);
            }
        }
        m
    }

    /// Writes row `v` of one propagation step into `out`.
    #[inline]
    pub(crate) fn step_row(&self, v: usize, m_prev: &Matrix, m0: &Matrix, out: &mut [f64]) {
        out.fill(0.0);
        for (u, c) in self.row(v) {
            for (o, x) in out.iter_mut().zip(m_prev.row(u)) {
                *o += c * x;
            }
        }
        if let Some(alpha) = self.restart_alpha {
            let keep = 1.0 - alpha;
            for (o, x) in out.iter_mut().zip(m0.row(v)) {
                *o = alpha * x + keep * *o;
            }
        }
    }

    fn check_shape(&self, m: &Matrix, what: &str) -> Result<()> {
        if m.rows() != self.num_nodes {
            return Err(Error::input(format!(
                "{what} has {} rows but the operator covers {} nodes",
                m.rows(),
                self.num_nodes
            )));
        }
        Ok(())
    }
}

/// One propagation step. `m0` is only read by the ppr kind.
pub fn apply_step(op: &PropagationOperator, m_prev: &Matrix, m0: &Matrix) -> Result<Matrix> {
    op.check_shape(m_prev, "previous message matrix")?;
    op.check_shape(m0, "initial message matrix")?;
    if m_prev.cols() != m0.cols() {
        return Err(Error::input(format!(
            "message widths differ: {} vs {}",
            m_prev.cols(),
            m0.cols()
        )));
    }
    Ok(step_unchecked(op, m_prev, m0))
}

fn step_unchecked(op: &PropagationOperator, m_prev: &Matrix, m0: &Matrix) -> Matrix {
    let d = m_prev.cols();
    let mut out = Matrix::zeros(op.num_nodes, d);
    if d == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(v, row)| op.step_row(v, m_prev, m0, row));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MessageMeta {
    pub operator: Option<OperatorKind>,
    pub restart_alpha: Option<f64>,
}

/// The multi-scale messages `{m⁰ … m^T}`; `steps[0]` is the raw feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSet {
    steps: Vec<Matrix>,
    meta: MessageMeta,
}

impl MessageSet {
    /// Panics-free constructor: checks that all steps share one shape.
    pub fn from_steps(steps: Vec<Matrix>, meta: MessageMeta) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::input("a message set needs at least the step-0 features"))?
            .shape();
        if let Some((t, m)) = steps.iter().enumerate().find(|(_, m)| m.shape() != first) {
            return Err(Error::input(format!(
                "message step {t} has shape {:?}, expected {first:?}",
                m.shape()
            )));
        }
        Ok(MessageSet { steps, meta })
    }

    /// Propagation depth `T`; there are `T + 1` stored steps.
    pub fn depth(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.steps[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.steps[0].cols()
    }

    pub fn steps(&self) -> &[Matrix] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &Matrix {
        &self.steps[t]
    }

    pub fn last(&self) -> &Matrix {
        self.steps.last().expect("non-empty by construction")
    }

    pub fn meta(&self) -> &MessageMeta {
        &self.meta
    }

    pub fn is_finite(&self) -> bool {
        self.steps.iter().all(Matrix::is_finite)
    }

    /// Restricts every step to the given node rows, in the given order.
    pub fn gather(&self, nodes: &[usize]) -> MessageSet {
        MessageSet {
            steps: self.steps.iter().map(|m| m.gather_rows(nodes)).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Keeps steps `0..=t`.
    pub fn truncated(&self, t: usize) -> MessageSet {
        MessageSet {
            steps: self.steps[..=t.min(self.depth())].to_vec(),
            meta: self.meta.clone(),
        }
    }

    pub fn into_steps(self) -> Vec<Matrix> {
        self.steps
    }
}

/// Runs `steps` propagation steps from `x`.
pub fn propagate(op: &PropagationOperator, x: &Matrix, steps: usize) -> Result<MessageSet> {
    op.check_shape(x, "feature matrix")?;
    if !x.is_finite() {
        return Err(Error::input("feature matrix contains NaN or infinite values"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    for t in 1..=steps {
        let next = step_unchecked(op, &out[t - 1], x);
        out.push(next);
    }
    let ms = MessageSet {
        steps: out,
        meta: MessageMeta {
            operator: Some(op.kind),
            restart_alpha: op.restart_alpha,
        },
    };
    if !ms.is_finite() {
        return Err(Error::numeric("propagation produced non-finite messages"));
    }
    Ok(ms)
}
