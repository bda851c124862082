//! Test-only helpers: random graphs and a dense reference implementation of
//! every propagation operator, written from the edge list alone.

#![allow(dead_code)]

pub mod gradcheck;

use gmlp_core::graph::{build_csr, BuildOptions, CsrGraph};
use gmlp_core::matrix::Matrix;
use gmlp_core::propagation::OperatorKind;
use rand::Rng;

pub struct RandomGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl RandomGraph {
    pub fn generate<R: Rng>(rng: &mut R, max_nodes: usize) -> RandomGraph {
        let n = rng.gen_range(1..=max_nodes);
        let density: f64 = rng.gen_range(0.0..0.5);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.gen_bool(density / 2.0) {
                    edges.push((u, v));
                }
            }
        }
        RandomGraph { n, edges }
    }

    pub fn csr(&self) -> CsrGraph {
        build_csr(&self.edges, self.n, BuildOptions::undirected_with_self_loops()).unwrap()
    }

    /// Symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for &(u, v) in &self.edges {
            if u != v {
                a[u][v] = 1.0;
                a[v][u] = 1.0;
            }
        }
        a
    }
}

/// Dense linear operator for `kind` (PPR returns its propagation part).
pub fn dense_operator(g: &RandomGraph, kind: OperatorKind) -> Vec<Vec<f64>> {
    let n = g.n;
    let a = g.adjacency();
    match kind {
        OperatorKind::AugNormAdj | OperatorKind::Ppr | OperatorKind::RandomWalk => {
            let mut at = a.clone();
            for (i, row) in at.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            let deg: Vec<f64> = at.iter().map(|r| r.iter().sum()).collect();
            let mut out = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    out[i][j] = if kind == OperatorKind::RandomWalk {
                        at[i][j] / deg[i]
                    } else {
                        at[i][j] / (deg[i] * deg[j]).sqrt()
                    };
                }
            }
            out
        }
        OperatorKind::Triangle => {
            let mut t = vec![vec![0.0; n]; n];
            for u in 0..n {
                for v in 0..n {
                    if a[u][v] == 0.0 {
                        continue;
                    }
                    t[u][v] = (0..n).filter(|&w| w != u && w != v).map(|w| a[u][w] * a[w][v]).sum();
                }
            }
            for (u, row) in t.iter_mut().enumerate() {
                let total: f64 = row.iter().sum();
                if total == 0.0 {
                    row[u] = 1.0;
                } else {
                    row.iter_mut().for_each(|x| *x /= total);
                }
            }
            t
        }
    }
}

fn dense_mul(op: &[Vec<f64>], m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| (0..m.rows()).map(|k| op[i][k] * m.get(k, j)).sum())
}

/// `[X, S X, S² X, …]` by repeated dense products.
pub fn dense_propagate(g: &RandomGraph, kind: OperatorKind, alpha: Option<f64>, x: &Matrix, steps: usize) -> Vec<Matrix> {
    let op = dense_operator(g, kind);
    let mut out = vec![x.clone()];
    for t in 1..=steps {
        let mut next = dense_mul(&op, &out[t - 1]);
        if let Some(a) = alpha {
            next = Matrix::from_fn(x.rows(), x.cols(), |i, j| a * x.get(i, j) + (1.0 - a) * next.get(i, j));
        }
        out.push(next);
    }
    out
}

pub fn random_features<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
}
