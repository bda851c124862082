//! Finite-difference gradient checking shared by the gradient and
//! acceptance suites.

use gmlp_core::matrix::Matrix;
use gmlp_core::message_agg::MessageAggKind;
use gmlp_core::model::{backward, forward, loss, ModelParams, ReferenceSource, Variant, VariantConfig};
use gmlp_core::propagation::{MessageMeta, MessageSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Relative disagreement between the ε and ε/10 central differences that
/// signals a kink inside `[x - ε, x + ε]`.
pub const KINK: f64 = 1e-3;
pub const N: usize = 6;
pub const D: usize = 4;
pub const T: usize = 2;
pub const C: usize = 3;
pub const EPOCHS: usize = 8;

pub fn messages(seed: u64) -> MessageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (0..=T)
        .map(|_| Matrix::from_fn(N, D, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    MessageSet::from_steps(steps, MessageMeta { operator: None, restart_alpha: None }).unwrap()
}

pub fn randomize(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
}

pub struct Case {
    pub cfg: VariantConfig,
    pub params: ModelParams,
    pub ms: MessageSet,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub epoch: usize,
    pub dropout_seed: u64,
}

impl Case {
    pub fn new(cfg: VariantConfig, seed: u64, epoch: usize) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(&cfg, D, C, &mut rng).unwrap();
        randomize(&mut params, seed);
        let labels = (0..N).map(|_| rng.gen_range(0..C)).collect();
        let mut mask: Vec<bool> = (0..N).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        Case { cfg, params, ms: messages(seed + 1000), labels, mask, epoch, dropout_seed: seed }
    }

    /// Loss with a fixed dropout mask so it is a smooth function of the parameters.
    pub fn loss_at(&self, params: &ModelParams) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let trace = forward(params, &self.cfg, &self.ms, true, &mut rng).unwrap();
        loss(&trace, &self.labels, &self.mask, self.epoch, EPOCHS).unwrap().total
    }

    pub fn analytic(&self) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let trace = forward(&self.params, &self.cfg, &self.ms, true, &mut rng).unwrap();
        backward(&self.params, &self.cfg, &self.ms, &self.labels, &self.mask, self.epoch, EPOCHS, &trace)
            .unwrap()
    }

    /// Central differences per entry. `None` marks an entry whose ±ε probe
    /// crosses a ReLU or max-pool switch: on a smooth stretch the ε and ε/10
    /// differences agree to O(ε²), across a switch they do not.
    pub fn numeric(&self) -> Vec<Vec<Option<f64>>> {
        let shapes: Vec<usize> = self.params.tensors().iter().map(|t| t.data.len()).collect();
        let mut out = Vec::new();
        for (ti, &len) in shapes.iter().enumerate() {
            let mut g = vec![None; len];
            for (k, gk) in g.iter_mut().enumerate() {
                let coarse = self.central(ti, k, EPS);
                let fine = self.central(ti, k, EPS / 10.0);
                if (coarse - fine).abs() <= KINK * coarse.abs().max(fine.abs()) + 1e-9 {
                    *gk = Some(coarse);
                }
            }
            out.push(g);
        }
        out
    }

    fn central(&self, tensor: usize, entry: usize, h: f64) -> f64 {
        let mut plus = self.params.clone();
        plus.tensors_mut()[tensor][entry] += h;
        let mut minus = self.params.clone();
        minus.tensors_mut()[tensor][entry] -= h;
        (self.loss_at(&plus) - self.loss_at(&minus)) / (2.0 * h)
    }

    /// Worst tensor-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over
    /// differentiable entries, plus the number of entries skipped as kinks.
    pub fn check(&self) -> (f64, String, usize) {
        let analytic = self.analytic();
        let numeric = self.numeric();
        let mut worst = (0.0, String::new(), 0);
        for (view, num) in analytic.tensors().iter().zip(&numeric) {
            let pairs: Vec<(f64, f64)> = view
                .data
                .iter()
                .zip(num)
                .filter_map(|(&a, n)| n.map(|n| (a, n)))
                .collect();
            worst.2 += num.len() - pairs.len();
            let diff = norm(pairs.iter().map(|(a, n)| a - n));
            let scale = norm(pairs.iter().map(|p| p.0)).max(norm(pairs.iter().map(|p| p.1))).max(1e-6);
            let rel = diff / scale;
            if rel > worst.0 {
                worst.0 = rel;
                worst.1 = view.name.clone();
            }
        }
        worst
    }
}

pub fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn configs() -> Vec<VariantConfig> {
    let base = VariantConfig {
        steps: T,
        hidden: vec![5],
        dropout: 0.0,
        attention_hidden: 3,
        ..VariantConfig::default()
    };
    let mut out = vec![VariantConfig { variant: Variant::Gu, ..base.clone() }];
    for agg in [
        MessageAggKind::Concat,
        MessageAggKind::MeanPool,
        MessageAggKind::MaxPool,
        MessageAggKind::Gating,
    ] {
        out.push(VariantConfig { variant: Variant::Gmu, message_agg: agg, ..base.clone() });
    }
    for agg in [MessageAggKind::Concat, MessageAggKind::MeanPool, MessageAggKind::MaxPool] {
        for reference in [ReferenceSource::LastHidden, ReferenceSource::Logits] {
            out.push(VariantConfig { message_agg: agg, reference, ..base.clone() });
        }
    }
    out
}
