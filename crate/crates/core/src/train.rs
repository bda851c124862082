//! Mini-batch training with early stopping, evaluation and repeated trials.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, ModelParams, VariantConfig};
use crate::propagation::MessageSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd => f.write_str("sgd"),
            OptimizerKind::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    /// `sgd` or `adam` (default moments).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::ADAM),
            _ => Err(Error::input(format!("unknown optimizer '{s}' (expected sgd or adam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Validate every this many epochs (and always on the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 512,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            optimizer: OptimizerKind::ADAM,
            patience: 50,
            seed: 42,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(Error::config(
                "epochs, batch_size, patience and eval_every must all be at least 1",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight decay {} is invalid", self.weight_decay)));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::config("adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// First-order optimizer over every tensor of a [`ModelParams`]. Weight decay
/// is an L2 term added to the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Optimizer {
            kind,
            lr,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let ones = vec![1.0; grads.tensors().len()];
        self.step_with_decay(params, grads, &ones);
    }

    /// One update where tensor `i` decays with `weight_decay · decay_scale[i]`.
    pub fn step_with_decay(&mut self, params: &mut ModelParams, grads: &ModelParams, decay_scale: &[f64]) {
        self.step += 1;
        let grads = grads.tensors();
        for (i, theta) in params.tensors_mut().into_iter().enumerate() {
            let (lr, wd) = (self.lr, self.weight_decay * decay_scale[i]);
            let g = grads[i].data;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gi) in theta.iter_mut().zip(g) {
                        *p -= lr * (gi + wd * *p);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.step);
                    let bc2 = 1.0 - beta2.powi(self.step);
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for k in 0..theta.len() {
                        let gi = g[k] + wd * theta[k];
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gi;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Disjoint node masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Splits {
    pub fn num_nodes(&self) -> usize {
        self.train.len()
    }

    pub fn check(&self, num_nodes: usize) -> Result<()> {
        if self.train.len() != num_nodes || self.val.len() != num_nodes || self.test.len() != num_nodes {
            return Err(Error::input(format!("split masks must cover all {num_nodes} nodes")));
        }
        for v in 0..num_nodes {
            let n = self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8;
            if n > 1 {
                return Err(Error::input(format!("node {v} is in more than one split")));
            }
        }
        Ok(())
    }
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made while fitting the epoch.
    pub train_accuracy: f64,
    /// `None` on epochs skipped by `eval_every`.
    pub val_accuracy: Option<f64>,
    pub alpha: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_acc,alpha_t,wall_ms\n");
        for r in &self.epochs {
            let val = r.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{:.3}", r.epoch, r.train_loss, val, r.alpha, r.wall_ms);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Copy with the timing column zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> TrainHistory {
        let mut h = self.clone();
        for r in &mut h.epochs {
            r.wall_ms = 0.0;
        }
        h
    }
}

pub fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |&m| m + 1)
}

/// Trains from a fresh initialisation seeded by `cfg.seed`; returns the
/// parameters of the best validation epoch.
pub fn train(
    cfg: &TrainConfig,
    vcfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    splits: &Splits,
) -> Result<(ModelParams, TrainHistory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    vcfg.check()?;
    let params = ModelParams::init(vcfg, ms.dim(), num_classes(labels), &mut rng)?;
    train_from(cfg, vcfg, ms, labels, splits, params, &mut rng)
}

/// Same as [`train`] but starting from given parameters.
pub fn train_from(
    cfg: &TrainConfig,
    vcfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    splits: &Splits,
    mut params: ModelParams,
    rng: &mut ChaCha8Rng,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.check()?;
    vcfg.check()?;
    let n = ms.num_nodes();
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} nodes", labels.len())));
    }
    splits.check(n)?;
    let mut train_nodes = mask_indices(&splits.train);
    if train_nodes.is_empty() {
        return Err(Error::input("training split is empty"));
    }
    if !splits.val.iter().any(|&m| m) {
        return Err(Error::input("validation split is empty"));
    }
    let val_nodes = mask_indices(&splits.val);
    let val_ms = ms.gather(&val_nodes);
    let val_labels: Vec<usize> = val_nodes.iter().map(|&v| labels[v]).collect();

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, &params);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        train_nodes.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut alpha = 1.0;
        for batch in train_nodes.chunks(cfg.batch_size) {
            let bms = ms.gather(batch);
            let blabels: Vec<usize> = batch.iter().map(|&v| labels[v]).collect();
            let mask = vec![true; batch.len()];
            let trace = model::forward(&params, vcfg, &bms, true, rng)?;
            let l = model::loss(&trace, &blabels, &mask, epoch, cfg.epochs)?;
            if !l.total.is_finite() {
                return Err(Error::numeric(format!("training loss became {} at epoch {epoch}", l.total)));
            }
            alpha = l.alpha;
            loss_sum += l.total * batch.len() as f64;
            hits += model::argmax_rows(trace.output_logits())
                .iter()
                .zip(&blabels)
                .filter(|(p, y)| p == y)
                .count();
            let grads = model::backward(&params, vcfg, &bms, &blabels, &mask, epoch, cfg.epochs, &trace)?;
            // the L2 term of SGA-only tensors belongs to the SGA loss and is
            // weighted like it
            let decay: Vec<f64> = params
                .tensors()
                .iter()
                .map(|t| if t.group.is_sga_only() { 1.0 - l.alpha } else { 1.0 })
                .collect();
            opt.step_with_decay(&mut params, &grads, &decay);
        }
        if !params.is_finite() {
            return Err(Error::numeric(format!("parameters became non-finite at epoch {epoch}")));
        }

        let val_accuracy = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let acc = accuracy(&params, vcfg, &val_ms, &val_labels)?;
            if best.as_ref().map_or(true, |b| acc > b.1) {
                best = Some((epoch, acc, params.clone()));
            }
            Some(acc)
        } else {
            None
        };
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_nodes.len() as f64,
            train_accuracy: hits as f64 / train_nodes.len() as f64,
            val_accuracy,
            alpha,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if let Some((best_epoch, _, _)) = &best {
            if epoch - best_epoch >= cfg.patience && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_accuracy, best_params) = best.expect("the last epoch always validates");
    let history = TrainHistory {
        epochs: records,
        best_epoch,
        best_val_accuracy,
        stopped_early,
    };
    Ok((best_params, history))
}

fn accuracy(params: &ModelParams, vcfg: &VariantConfig, ms: &MessageSet, labels: &[usize]) -> Result<f64> {
    let pred = model::predict(params, vcfg, ms)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of masked nodes whose prediction equals the label.
pub fn evaluate(
    params: &ModelParams,
    vcfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    mask: &[bool],
) -> Result<f64> {
    if mask.len() != ms.num_nodes() || labels.len() != ms.num_nodes() {
        return Err(Error::input("labels and mask must cover every node"));
    }
    let nodes = mask_indices(mask);
    if nodes.is_empty() {
        return Err(Error::input("evaluation mask selects no nodes"));
    }
    let sub_labels: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
    accuracy(params, vcfg, &ms.gather(&nodes), &sub_labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub test_accuracies: Vec<f64>,
    pub best_epochs: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl fmt::Display for TrialSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} over {} trials", self.mean, self.std, self.test_accuracies.len())
    }
}

/// splitmix64 of `base + i`, so trial seeds are distinct and reproducible.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    let mut z = base.wrapping_add((trial as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_trials(
    cfg: &TrainConfig,
    vcfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    splits: &Splits,
    n_trials: usize,
) -> Result<TrialSummary> {
    if n_trials == 0 {
        return Err(Error::input("at least one trial is required"));
    }
    let seeds: Vec<u64> = (0..n_trials).map(|i| trial_seed(cfg.seed, i)).collect();
    run_trials_with_seeds(cfg, vcfg, ms, labels, splits, &seeds)
}

/// One training run per seed (in parallel), each scored on the test mask with
/// its best-validation parameters.
pub fn run_trials_with_seeds(
    cfg: &TrainConfig,
    vcfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    splits: &Splits,
    seeds: &[u64],
) -> Result<TrialSummary> {
    if seeds.is_empty() {
        return Err(Error::input("at least one trial is required"));
    }
    if !splits.test.iter().any(|&m| m) {
        return Err(Error::input("test split is empty"));
    }
    let results: Vec<Result<(f64, usize)>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let (params, history) = train(&cfg, vcfg, ms, labels, splits)?;
            let acc = evaluate(&params, vcfg, ms, labels, &splits.test)?;
            Ok((acc, history.best_epoch))
        })
        .collect();
    let mut test_accuracies = Vec::with_capacity(seeds.len());
    let mut best_epochs = Vec::with_capacity(seeds.len());
    for r in results {
        let (acc, epoch) = r?;
        test_accuracies.push(acc);
        best_epochs.push(epoch);
    }
    let (mean, std) = mean_std(&test_accuracies);
    Ok(TrialSummary {
        seeds: seeds.to_vec(),
        test_accuracies,
        best_epochs,
        mean,
        std,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
