//! Partition-aware precompute with traffic accounting, and the closed-form
//! compute/communication cost model for feature versus neural message passing.
//!
//! Workers are simulated in one process. Each step is bulk-synchronous: every
//! worker reads the completed previous step, computes its own rows batch by
//! batch, and pushes them back at the step barrier. Traffic is counted in
//! message-vector entries (floats).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::matrix::Matrix;
use crate::propagation::{MessageMeta, MessageSet, PropagationOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionScheme {
    /// Contiguous ranges, sizes within one node of each other.
    Range,
    /// `splitmix64(v) mod W`.
    Hash,
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(PartitionScheme::Range),
            "hash" => Ok(PartitionScheme::Hash),
            _ => Err(Error::input(format!("unknown partition scheme '{s}' (expected range or hash)"))),
        }
    }
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::Range => "range",
            PartitionScheme::Hash => "hash",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    num_workers: usize,
    owner: Vec<usize>,
}

impl PartitionPlan {
    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    /// Nodes owned by worker `w`, ascending.
    pub fn members(&self, w: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&v| self.owner[v] == w).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_workers];
        for &w in &self.owner {
            s[w] += 1;
        }
        s
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn partition_nodes(g: &CsrGraph, workers: usize, scheme: PartitionScheme) -> Result<PartitionPlan> {
    partition_count(g.num_nodes(), workers, scheme)
}

/// [`partition_nodes`] for a bare node count.
pub fn partition_count(n: usize, workers: usize, scheme: PartitionScheme) -> Result<PartitionPlan> {
    if workers == 0 {
        return Err(Error::input("need at least one worker"));
    }
    if workers > n {
        return Err(Error::input(format!("{workers} workers for only {n} nodes")));
    }
    let owner = match scheme {
        PartitionScheme::Range => {
            let (base, extra) = (n / workers, n % workers);
            let mut owner = Vec::with_capacity(n);
            for w in 0..workers {
                let size = base + usize::from(w < extra);
                owner.extend(std::iter::repeat(w).take(size));
            }
            owner
        }
        PartitionScheme::Hash => (0..n).map(|v| (splitmix64(v as u64) % workers as u64) as usize).collect(),
    };
    Ok(PartitionPlan { num_workers: workers, owner })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTraffic {
    pub step: usize,
    pub pulled: u64,
    pub pushed: u64,
    pub local: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Entries read from another worker's partition.
    pub pulled: u64,
    /// Entries written back to the shared store.
    pub pushed: u64,
    /// Entries read from the worker's own partition.
    pub local: u64,
    pub flops: u64,
    pub per_step: Vec<StepTraffic>,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain integer struct")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::input(format!("invalid cost report: {e}")))
    }

    fn add(&mut self, s: StepTraffic) {
        self.pulled += s.pulled;
        self.pushed += s.pushed;
        self.local += s.local;
        self.flops += s.flops;
        self.per_step.push(s);
    }
}

struct WorkerOutput {
    nodes: Vec<usize>,
    rows: Vec<f64>,
    pulled: u64,
    local: u64,
}

/// Same result as [`crate::propagation::propagate`], bit for bit, computed by
/// `plan.num_workers()` simulated workers in batches of `batch_size` nodes.
pub fn precompute_batched(
    op: &PropagationOperator,
    x: &Matrix,
    steps: usize,
    plan: &PartitionPlan,
    batch_size: usize,
) -> Result<(MessageSet, CostReport)> {
    let n = op.num_nodes();
    if x.rows() != n {
        return Err(Error::input(format!(
            "feature matrix has {} rows but the operator covers {n} nodes",
            x.rows()
        )));
    }
    if plan.owner.len() != n {
        return Err(Error::input(format!(
            "partition plan covers {} nodes, graph has {n}",
            plan.owner.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    if !x.is_finite() {
        return Err(Error::input("feature matrix contains NaN or infinite values"));
    }
    let d = x.cols();
    let members: Vec<Vec<usize>> = (0..plan.num_workers).map(|w| plan.members(w)).collect();
    let mut out = vec![x.clone()];
    let mut report = CostReport::default();
    let ppr_flops = if op.restart_alpha().is_some() { 3 * n * d } else { 0 };

    for step in 1..=steps {
        let prev = &out[step - 1];
        let m0 = &out[0];
        let outputs: Vec<WorkerOutput> = members
            .par_iter()
            .enumerate()
            .map(|(w, nodes)| {
                let mut rows = vec![0.0; nodes.len() * d];
                let (mut pulled, mut local) = (0u64, 0u64);
                for (b, batch) in nodes.chunks(batch_size).enumerate() {
                    let base = b * batch_size;
                    for (i, &v) in batch.iter().enumerate() {
                        for &u in op.row_sources(v) {
                            if plan.owner[u] == w {
                                local += d as u64;
                            } else {
                                pulled += d as u64;
                            }
                        }
                        if d > 0 {
                            let slot = &mut rows[(base + i) * d..(base + i + 1) * d];
                            op.step_row(v, prev, m0, slot);
                        }
                    }
                }
                WorkerOutput { nodes: nodes.clone(), rows, pulled, local }
            })
            .collect();

        // step barrier: push every worker's rows into the shared store
        let mut next = Matrix::zeros(n, d);
        let mut traffic = StepTraffic {
            step,
            flops: (2 * op.nnz() * d + ppr_flops) as u64,
            ..StepTraffic::default()
        };
        for o in outputs {
            for (i, &v) in o.nodes.iter().enumerate() {
                next.row_mut(v).copy_from_slice(&o.rows[i * d..(i + 1) * d]);
            }
            traffic.pushed += (o.nodes.len() * d) as u64;
            traffic.pulled += o.pulled;
            traffic.local += o.local;
        }
        if !next.is_finite() {
            return Err(Error::numeric(format!("propagation produced non-finite values at step {step}")));
        }
        report.add(traffic);
        out.push(next);
    }
    let meta = MessageMeta {
        operator: Some(op.kind()),
        restart_alpha: op.restart_alpha(),
    };
    Ok((MessageSet::from_steps(out, meta)?, report))
}

#[derive(Clone, Debug)]
pub struct PrecomputeMeasurement {
    pub messages: MessageSet,
    pub report: CostReport,
    pub wall_ms: f64,
}

/// [`precompute_batched`] under a monotonic timer.
pub fn measure_precompute(
    op: &PropagationOperator,
    x: &Matrix,
    steps: usize,
    plan: &PartitionPlan,
    batch_size: usize,
) -> Result<PrecomputeMeasurement> {
    let started = Instant::now();
    let (messages, report) = precompute_batched(op, x, steps, plan, batch_size)?;
    Ok(PrecomputeMeasurement {
        messages,
        report,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostScheme {
    /// Neural message passing (GCN-style).
    Nmp,
    /// Decoupled neural message passing.
    Dnmp,
    /// Feature message passing: one-time precompute, then an MLP.
    Fmp,
    /// Sampled neighbourhood expansion with fan-out `k`.
    Sage,
}

impl CostScheme {
    pub const ALL: [CostScheme; 4] = [CostScheme::Nmp, CostScheme::Dnmp, CostScheme::Fmp, CostScheme::Sage];
}

impl fmt::Display for CostScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostScheme::Nmp => "NMP",
            CostScheme::Dnmp => "DNMP",
            CostScheme::Fmp => "FMP",
            CostScheme::Sage => "sage",
        })
    }
}

impl FromStr for CostScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmp" => Ok(CostScheme::Nmp),
            "dnmp" => Ok(CostScheme::Dnmp),
            "fmp" => Ok(CostScheme::Fmp),
            "sage" => Ok(CostScheme::Sage),
            _ => Err(Error::input(format!("unknown cost scheme '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostInputs {
    pub nodes: u64,
    pub edges: u64,
    pub dim: u64,
    pub prop_layers: u64,
    pub update_layers: u64,
    pub epochs: u64,
    pub fanout: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostEstimate {
    pub forward_flops: u128,
    pub comm_entries: u128,
}

/// Closed-form counts with unit constants. Saturates instead of overflowing.
pub fn cost_model(c: &CostInputs, scheme: CostScheme) -> CostEstimate {
    let (n, m, d) = (c.nodes as u128, c.edges as u128, c.dim as u128);
    let (lp, lu, t) = (c.prop_layers as u128, c.update_layers as u128, c.epochs as u128);
    let mul = |xs: &[u128]| xs.iter().fold(1u128, |acc, &x| acc.saturating_mul(x));
    let update = mul(&[lu, n, d, d]);
    match scheme {
        CostScheme::Nmp | CostScheme::Dnmp => CostEstimate {
            forward_flops: mul(&[lp, m, d]).saturating_add(update),
            comm_entries: mul(&[lp, m, t, d]),
        },
        CostScheme::Fmp => CostEstimate {
            forward_flops: update,
            comm_entries: mul(&[lp, m, d]),
        },
        CostScheme::Sage => {
            let expansion = (c.fanout as u128).saturating_pow(c.prop_layers.min(u32::MAX as u64) as u32);
            CostEstimate {
                forward_flops: mul(&[expansion, n, d, d]),
                comm_entries: mul(&[expansion, n, d, t]),
            }
        }
    }
}
