//! Update networks and the three model variants.
//!
//! * `Gu`   – MLP on the last propagated step only.
//! * `Gmu`  – one message aggregator (concat / pooling / gating) then an MLP.
//! * `Full` – two branches sharing the messages. The non-adaptive (NA) branch
//!   combines messages without parameters and classifies them; its last hidden
//!   activation (or its logits) is the per-node reference for the self-guided
//!   attention (SGA) branch, which re-weights the steps and classifies again.
//!   The two losses are blended with `α_t = cos(πt / 2T_e)`.
//!
//! Gradients are hand-derived reverse mode, including the path from the SGA
//! loss back into the NA MLP through the reference.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::message_agg::{
    attention_backward, attention_forward, combine_gating, combine_nonadaptive, gating_backward,
    AttentionCache, AttentionWeights, MessageAggKind,
};
use crate::propagation::{MessageSet, OperatorKind};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `widths = [in, hidden…, out]`.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Mlp {
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Linear {
                    weight: Matrix::from_fn(w[0], w[1], |_, _| rng.gen_range(-limit..=limit)),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize]) -> Mlp {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Linear {
                    weight: Matrix::zeros(w[0], w[1]),
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        if let Some(l) = self.layers.last() {
            w.push(l.weight.cols());
        }
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    fn check_chain(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::input("an MLP needs at least one layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::input(format!(
                    "layer {i}: bias length {} does not match output width {}",
                    l.bias.len(),
                    l.weight.cols()
                )));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::input(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    w[0].weight.cols(),
                    i + 1,
                    w[1].weight.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Activations kept for [`Mlp`] backward.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input to each layer (post-dropout for layers after the first).
    inputs: Vec<Matrix>,
    /// Post-ReLU, pre-dropout activation of each hidden layer.
    hidden: Vec<Matrix>,
    /// Inverted-dropout multipliers (0 or `1/(1-p)`) per hidden layer.
    masks: Vec<Option<Vec<f64>>>,
}

impl MlpCache {
    pub fn last_hidden(&self) -> Option<&Matrix> {
        self.hidden.last()
    }
}

/// affine → ReLU → dropout for every hidden layer; the last layer is affine only.
pub fn mlp_forward<R: Rng + ?Sized>(
    mlp: &Mlp,
    input: &Matrix,
    dropout: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Matrix, MlpCache)> {
    mlp.check_chain()?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::input(format!("dropout {dropout} is outside [0, 1)")));
    }
    if input.cols() != mlp.input_width() {
        return Err(Error::input(format!(
            "MLP expects {} input features, got {}",
            mlp.input_width(),
            input.cols()
        )));
    }
    let n_layers = mlp.layers.len();
    let mut cache = MlpCache {
        inputs: Vec::with_capacity(n_layers),
        hidden: Vec::with_capacity(n_layers - 1),
        masks: Vec::with_capacity(n_layers - 1),
    };
    let mut x = input.clone();
    for (i, layer) in mlp.layers.iter().enumerate() {
        let mut z = x.matmul(&layer.weight);
        z.add_row_vector(&layer.bias);
        cache.inputs.push(x);
        if i + 1 == n_layers {
            return Ok((z, cache));
        }
        z.map_inplace(|v| v.max(0.0));
        let mut next = z.clone();
        let mask = if train_mode && dropout > 0.0 {
            let scale = 1.0 / (1.0 - dropout);
            let m: Vec<f64> = (0..next.as_slice().len())
                .map(|_| if rng.gen::<f64>() < dropout { 0.0 } else { scale })
                .collect();
            for (v, k) in next.as_mut_slice().iter_mut().zip(&m) {
                *v *= k;
            }
            Some(m)
        } else {
            None
        };
        cache.hidden.push(z);
        cache.masks.push(mask);
        x = next;
    }
    unreachable!("loop returns on the last layer")
}

/// Returns parameter gradients and, when asked, `∂L/∂input`.
/// `extra_last_hidden` is an additional gradient arriving at the last hidden
/// activation from outside the MLP (the attention reference).
fn mlp_backward(
    mlp: &Mlp,
    cache: &MlpCache,
    d_out: &Matrix,
    extra_last_hidden: Option<&Matrix>,
    need_input_grad: bool,
) -> (Mlp, Option<Matrix>) {
    let n_layers = mlp.layers.len();
    let mut grads: Vec<Linear> = Vec::with_capacity(n_layers);
    let mut dz = d_out.clone();
    let mut d_input = None;
    for l in (0..n_layers).rev() {
        grads.push(Linear {
            weight: cache.inputs[l].t_matmul(&dz),
            bias: dz.column_sums(),
        });
        if l == 0 {
            if need_input_grad {
                d_input = Some(dz.matmul_t(&mlp.layers[0].weight));
            }
            break;
        }
        let mut dh = dz.matmul_t(&mlp.layers[l].weight);
        let h = l - 1;
        if let Some(mask) = &cache.masks[h] {
            for (g, k) in dh.as_mut_slice().iter_mut().zip(mask) {
                *g *= k;
            }
        }
        if h + 2 == n_layers {
            if let Some(extra) = extra_last_hidden {
                dh.add_assign(extra);
            }
        }
        for (g, a) in dh.as_mut_slice().iter_mut().zip(cache.hidden[h].as_slice()) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        dz = dh;
    }
    grads.reverse();
    (Mlp { layers: grads }, d_input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d × h_att`
    pub w1: Matrix,
    /// `h_ref × h_att`
    pub w2: Matrix,
    pub q: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    NaMlp,
    SgaMlp,
    Attention,
    Gating,
}

impl ParamGroup {
    /// Parameters that only the SGA branch touches.
    pub fn is_sga_only(self) -> bool {
        matches!(self, ParamGroup::SgaMlp | ParamGroup::Attention)
    }
}

pub struct TensorView<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

/// Every trainable tensor. Mutable access bumps a generation counter so stale
/// forward traces can be detected.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    na_mlp: Mlp,
    sga_mlp: Option<Mlp>,
    attention: Option<AttentionParams>,
    gating_s: Option<Vec<f64>>,
    generation: u64,
}

impl ModelParams {
    pub fn from_parts(
        na_mlp: Mlp,
        sga_mlp: Option<Mlp>,
        attention: Option<AttentionParams>,
        gating_s: Option<Vec<f64>>,
    ) -> Self {
        ModelParams {
            na_mlp,
            sga_mlp,
            attention,
            gating_s,
            generation: 0,
        }
    }

    /// Glorot-uniform MLP and attention projection weights, zero biases, zero `q`
    /// and zero gating vector. With `q = 0` the first attention forward is an
    /// exact mean over steps.
    pub fn init<R: Rng + ?Sized>(
        cfg: &VariantConfig,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.check()?;
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::input("feature width and class count must be positive"));
        }
        let na_in = cfg.na_input_width(feature_dim);
        let mut na_widths = vec![na_in];
        na_widths.extend(&cfg.hidden);
        na_widths.push(num_classes);
        let na_mlp = Mlp::glorot(&na_widths, rng);

        let (sga_mlp, attention) = if cfg.variant == Variant::Full {
            let mut w = vec![feature_dim];
            w.extend(&cfg.hidden);
            w.push(num_classes);
            let sga = Mlp::glorot(&w, rng);
            let h_ref = match cfg.reference {
                ReferenceSource::LastHidden => *cfg.hidden.last().expect("checked"),
                ReferenceSource::Logits => num_classes,
            };
            let h_att = cfg.attention_hidden;
            let glorot = |r: usize, c: usize, rng: &mut R| {
                let limit = (6.0 / (r + c) as f64).sqrt();
                Matrix::from_fn(r, c, |_, _| rng.gen_range(-limit..=limit))
            };
            let att = AttentionParams {
                w1: glorot(feature_dim, h_att, rng),
                w2: glorot(h_ref, h_att, rng),
                q: vec![0.0; h_att],
            };
            (Some(sga), Some(att))
        } else {
            (None, None)
        };
        let gating_s = (cfg.variant == Variant::Gmu && cfg.message_agg == MessageAggKind::Gating)
            .then(|| vec![0.0; feature_dim]);
        Ok(ModelParams::from_parts(na_mlp, sga_mlp, attention, gating_s))
    }

    pub fn na_mlp(&self) -> &Mlp {
        &self.na_mlp
    }

    pub fn sga_mlp(&self) -> Option<&Mlp> {
        self.sga_mlp.as_ref()
    }

    pub fn attention(&self) -> Option<&AttentionParams> {
        self.attention.as_ref()
    }

    pub fn gating_s(&self) -> Option<&[f64]> {
        self.gating_s.as_deref()
    }

    pub fn na_mlp_mut(&mut self) -> &mut Mlp {
        self.generation += 1;
        &mut self.na_mlp
    }

    pub fn sga_mlp_mut(&mut self) -> Option<&mut Mlp> {
        self.generation += 1;
        self.sga_mlp.as_mut()
    }

    pub fn attention_mut(&mut self) -> Option<&mut AttentionParams> {
        self.generation += 1;
        self.attention.as_mut()
    }

    pub fn gating_s_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.generation += 1;
        self.gating_s.as_mut()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z.generation = 0;
        z
    }

    /// Tensors in declaration order: NA layers (weight, bias), SGA layers,
    /// attention `W₁`, `W₂`, `q`, gating `s`.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        mlp_views(&self.na_mlp, "na", ParamGroup::NaMlp, &mut out);
        if let Some(m) = &self.sga_mlp {
            mlp_views(m, "sga", ParamGroup::SgaMlp, &mut out);
        }
        if let Some(a) = &self.attention {
            out.push(TensorView {
                name: "attention.w1".into(),
                group: ParamGroup::Attention,
                shape: a.w1.shape(),
                data: a.w1.as_slice(),
            });
            out.push(TensorView {
                name: "attention.w2".into(),
                group: ParamGroup::Attention,
                shape: a.w2.shape(),
                data: a.w2.as_slice(),
            });
            out.push(TensorView {
                name: "attention.q".into(),
                group: ParamGroup::Attention,
                shape: (1, a.q.len()),
                data: &a.q,
            });
        }
        if let Some(s) = &self.gating_s {
            out.push(TensorView {
                name: "gating.s".into(),
                group: ParamGroup::Gating,
                shape: (1, s.len()),
                data: s,
            });
        }
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.na_mlp.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        if let Some(m) = &mut self.sga_mlp {
            for l in &mut m.layers {
                out.push(l.weight.as_mut_slice());
                out.push(&mut l.bias);
            }
        }
        if let Some(a) = &mut self.attention {
            out.push(a.w1.as_mut_slice());
            out.push(a.w2.as_mut_slice());
            out.push(&mut a.q);
        }
        if let Some(s) = &mut self.gating_s {
            out.push(s);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn mlp_views<'a>(mlp: &'a Mlp, prefix: &str, group: ParamGroup, out: &mut Vec<TensorView<'a>>) {
    for (i, l) in mlp.layers.iter().enumerate() {
        out.push(TensorView {
            name: format!("{prefix}.{i}.weight"),
            group,
            shape: l.weight.shape(),
            data: l.weight.as_slice(),
        });
        out.push(TensorView {
            name: format!("{prefix}.{i}.bias"),
            group,
            shape: (1, l.bias.len()),
            data: &l.bias,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Gu,
    Gmu,
    Full,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gu => "gu",
            Variant::Gmu => "gmu",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gu" => Ok(Variant::Gu),
            "gmu" => Ok(Variant::Gmu),
            "full" => Ok(Variant::Full),
            _ => Err(Error::input(format!("unknown variant '{s}' (expected gu, gmu or full)"))),
        }
    }
}

/// Where the SGA branch takes its per-node reference from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceSource {
    LastHidden,
    Logits,
}

impl fmt::Display for ReferenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceSource::LastHidden => "last_hidden",
            ReferenceSource::Logits => "logits",
        })
    }
}

impl FromStr for ReferenceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_hidden" => Ok(ReferenceSource::LastHidden),
            "logits" => Ok(ReferenceSource::Logits),
            _ => Err(Error::input(format!(
                "unknown reference source '{s}' (expected last_hidden or logits)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantConfig {
    pub variant: Variant,
    pub graph_agg: OperatorKind,
    pub restart_alpha: Option<f64>,
    /// GMU: the single aggregator. FULL: the NA-branch aggregator.
    pub message_agg: MessageAggKind,
    /// Propagation depth `T`.
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub reference: ReferenceSource,
    pub attention_hidden: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            variant: Variant::Full,
            graph_agg: OperatorKind::AugNormAdj,
            restart_alpha: None,
            message_agg: MessageAggKind::Concat,
            steps: 5,
            hidden: vec![64],
            dropout: 0.5,
            reference: ReferenceSource::LastHidden,
            attention_hidden: 16,
        }
    }
}

impl VariantConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} is outside [0, 1)", self.dropout)));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        match self.variant {
            Variant::Gu => {}
            Variant::Gmu => {
                if self.message_agg == MessageAggKind::Attention {
                    return Err(Error::config(
                        "attention needs a reference vector; use the full variant",
                    ));
                }
            }
            Variant::Full => {
                if self.message_agg.is_adaptive() {
                    return Err(Error::config(format!(
                        "the NA branch needs a non-adaptive aggregator, got {}",
                        self.message_agg
                    )));
                }
                if self.reference == ReferenceSource::LastHidden && self.hidden.is_empty() {
                    return Err(Error::config(
                        "reference = last_hidden needs at least one hidden layer",
                    ));
                }
                if self.attention_hidden == 0 {
                    return Err(Error::config("attention width must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Input width of the NA (or only) MLP.
    pub fn na_input_width(&self, feature_dim: usize) -> usize {
        match self.variant {
            Variant::Gu => feature_dim,
            Variant::Gmu | Variant::Full => self.message_agg.output_width(feature_dim, self.steps),
        }
    }
}

#[derive(Clone, Debug)]
struct TraceCache {
    generation: u64,
    rows: usize,
    na: MlpCache,
    sga: Option<MlpCache>,
    attention: Option<AttentionCache>,
    reference: Option<Matrix>,
}

/// Forward results plus the intermediates backward needs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits_na: Matrix,
    pub logits_sga: Option<Matrix>,
    /// Softmax weights (FULL) or raw gates (GMU-gating).
    pub attn: Option<AttentionWeights>,
    cache: TraceCache,
}

impl ForwardTrace {
    /// Logits used for prediction: SGA for FULL, the single branch otherwise.
    pub fn output_logits(&self) -> &Matrix {
        self.logits_sga.as_ref().unwrap_or(&self.logits_na)
    }

    pub fn reference(&self) -> Option<&Matrix> {
        self.cache.reference.as_ref()
    }
}

fn param_mismatch(what: &str) -> Error {
    Error::config(format!("parameters do not match the variant: missing {what}"))
}

pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &VariantConfig,
    ms: &MessageSet,
    train_mode: bool,
    rng: &mut R,
) -> Result<ForwardTrace> {
    cfg.check()?;
    if ms.depth() != cfg.steps {
        return Err(Error::input(format!(
            "message set has depth {} but the variant expects {}",
            ms.depth(),
            cfg.steps
        )));
    }
    let rows = ms.num_nodes();
    let generation = params.generation;
    match cfg.variant {
        Variant::Gu => {
            let (logits, na) = mlp_forward(&params.na_mlp, ms.last(), cfg.dropout, train_mode, rng)?;
            Ok(ForwardTrace {
                logits_na: logits,
                logits_sga: None,
                attn: None,
                cache: TraceCache {
                    generation,
                    rows,
                    na,
                    sga: None,
                    attention: None,
                    reference: None,
                },
            })
        }
        Variant::Gmu => {
            let (combined, gates) = if cfg.message_agg == MessageAggKind::Gating {
                let s = params.gating_s.as_ref().ok_or_else(|| param_mismatch("gating vector"))?;
                let (c, g) = combine_gating(ms, s)?;
                (c, Some(g))
            } else {
                (combine_nonadaptive(ms, cfg.message_agg), None)
            };
            let (logits, na) = mlp_forward(&params.na_mlp, &combined, cfg.dropout, train_mode, rng)?;
            Ok(ForwardTrace {
                logits_na: logits,
                logits_sga: None,
                attn: gates,
                cache: TraceCache {
                    generation,
                    rows,
                    na,
                    sga: None,
                    attention: None,
                    reference: None,
                },
            })
        }
        Variant::Full => {
            let sga_mlp = params.sga_mlp.as_ref().ok_or_else(|| param_mismatch("SGA MLP"))?;
            let att = params.attention.as_ref().ok_or_else(|| param_mismatch("attention"))?;
            let combined = combine_nonadaptive(ms, cfg.message_agg);
            let (logits_na, na) = mlp_forward(&params.na_mlp, &combined, cfg.dropout, train_mode, rng)?;
            let reference = match cfg.reference {
                ReferenceSource::LastHidden => na
                    .last_hidden()
                    .ok_or_else(|| Error::config("NA MLP has no hidden layer to use as reference"))?
                    .clone(),
                ReferenceSource::Logits => logits_na.clone(),
            };
            let (attended, att_cache) = attention_forward(ms, &reference, &att.w1, &att.w2, &att.q)?;
            let (logits_sga, sga) = mlp_forward(sga_mlp, &attended, cfg.dropout, train_mode, rng)?;
            Ok(ForwardTrace {
                logits_na,
                logits_sga: Some(logits_sga),
                attn: Some(att_cache.weights.clone()),
                cache: TraceCache {
                    generation,
                    rows,
                    na,
                    sga: Some(sga),
                    attention: Some(att_cache),
                    reference: Some(reference),
                },
            })
        }
    }
}

/// `α_t = cos(πt / 2T_e)`, pinned to exactly 1 at `t = 0` and 0 at `t = T_e`.
pub fn schedule_alpha(epoch: usize, total_epochs: usize) -> f64 {
    if epoch == 0 {
        1.0
    } else if epoch >= total_epochs {
        0.0
    } else {
        (PI * epoch as f64 / (2.0 * total_epochs as f64)).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub na: f64,
    pub sga: Option<f64>,
    /// Weight on the NA loss; 1 for single-branch variants.
    pub alpha: f64,
}

fn check_targets(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<usize> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(Error::input(format!(
            "labels ({}) / mask ({}) do not cover the {} rows",
            labels.len(),
            mask.len(),
            logits.rows()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::input("loss mask selects no nodes"));
    }
    if let Some((v, &y)) = labels
        .iter()
        .enumerate()
        .find(|&(v, &y)| mask[v] && y >= logits.cols())
    {
        return Err(Error::input(format!(
            "label {y} of row {v} is outside 0..{}",
            logits.cols()
        )));
    }
    Ok(count)
}

/// Mean softmax cross-entropy over masked rows.
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let count = check_targets(logits, labels, mask)?;
    let mut total = 0.0;
    for v in (0..logits.rows()).filter(|&v| mask[v]) {
        let row = logits.row(v);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[v]];
    }
    Ok(total / count as f64)
}

/// `∂/∂logits` of [`cross_entropy`], scaled by `weight`.
fn cross_entropy_grad(logits: &Matrix, labels: &[usize], mask: &[bool], weight: f64) -> Matrix {
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let mut g = Matrix::zeros(logits.rows(), logits.cols());
    for v in (0..logits.rows()).filter(|&v| mask[v]) {
        let row = logits.row(v);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = g.row_mut(v);
        for (k, e) in exps.iter().enumerate() {
            let target = if k == labels[v] { 1.0 } else { 0.0 };
            out[k] = weight * (e / sum - target) / count;
        }
    }
    g
}

pub fn loss(
    trace: &ForwardTrace,
    labels: &[usize],
    mask: &[bool],
    epoch: usize,
    total_epochs: usize,
) -> Result<LossBreakdown> {
    if epoch > total_epochs {
        return Err(Error::input(format!(
            "epoch {epoch} is past the planned horizon {total_epochs}"
        )));
    }
    let na = cross_entropy(&trace.logits_na, labels, mask)?;
    match &trace.logits_sga {
        None => Ok(LossBreakdown {
            total: na,
            na,
            sga: None,
            alpha: 1.0,
        }),
        Some(sga_logits) => {
            let sga = cross_entropy(sga_logits, labels, mask)?;
            let alpha = schedule_alpha(epoch, total_epochs);
            Ok(LossBreakdown {
                total: alpha * na + (1.0 - alpha) * sga,
                na,
                sga: Some(sga),
                alpha,
            })
        }
    }
}

/// Exact gradients of [`loss`] w.r.t. every parameter.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    params: &ModelParams,
    cfg: &VariantConfig,
    ms: &MessageSet,
    labels: &[usize],
    mask: &[bool],
    epoch: usize,
    total_epochs: usize,
    trace: &ForwardTrace,
) -> Result<ModelParams> {
    if trace.cache.generation != params.generation || trace.cache.rows != ms.num_nodes() {
        return Err(Error::contract(
            "forward trace is stale: parameters or inputs changed since it was produced",
        ));
    }
    if epoch > total_epochs {
        return Err(Error::input(format!(
            "epoch {epoch} is past the planned horizon {total_epochs}"
        )));
    }
    check_targets(&trace.logits_na, labels, mask)?;
    let mut grads = params.zeros_like();

    match cfg.variant {
        Variant::Gu => {
            let d = cross_entropy_grad(&trace.logits_na, labels, mask, 1.0);
            grads.na_mlp = mlp_backward(&params.na_mlp, &trace.cache.na, &d, None, false).0;
        }
        Variant::Gmu => {
            let d = cross_entropy_grad(&trace.logits_na, labels, mask, 1.0);
            let gating = cfg.message_agg == MessageAggKind::Gating;
            let (g, d_in) = mlp_backward(&params.na_mlp, &trace.cache.na, &d, None, gating);
            grads.na_mlp = g;
            if gating {
                let gates = trace.attn.as_ref().ok_or_else(|| param_mismatch("gate trace"))?;
                grads.gating_s = Some(gating_backward(ms, gates, &d_in.expect("requested")));
            }
        }
        Variant::Full => {
            let sga_logits = trace.logits_sga.as_ref().ok_or_else(|| param_mismatch("SGA logits"))?;
            let sga_mlp = params.sga_mlp.as_ref().ok_or_else(|| param_mismatch("SGA MLP"))?;
            let att = params.attention.as_ref().ok_or_else(|| param_mismatch("attention"))?;
            let sga_cache = trace.cache.sga.as_ref().ok_or_else(|| param_mismatch("SGA trace"))?;
            let att_cache = trace.cache.attention.as_ref().ok_or_else(|| param_mismatch("attention trace"))?;
            let reference = trace.cache.reference.as_ref().ok_or_else(|| param_mismatch("reference"))?;

            let alpha = schedule_alpha(epoch, total_epochs);
            let d_sga = cross_entropy_grad(sga_logits, labels, mask, 1.0 - alpha);
            let (g_sga, d_attended) = mlp_backward(sga_mlp, sga_cache, &d_sga, None, true);
            let ag = attention_backward(ms, reference, &att.w2, &att.q, att_cache, &d_attended.expect("requested"));

            let mut d_na = cross_entropy_grad(&trace.logits_na, labels, mask, alpha);
            grads.na_mlp = match cfg.reference {
                ReferenceSource::LastHidden => {
                    mlp_backward(&params.na_mlp, &trace.cache.na, &d_na, Some(&ag.reference), false).0
                }
                ReferenceSource::Logits => {
                    d_na.add_assign(&ag.reference);
                    mlp_backward(&params.na_mlp, &trace.cache.na, &d_na, None, false).0
                }
            };
            grads.sga_mlp = Some(g_sga);
            grads.attention = Some(AttentionParams {
                w1: ag.w1,
                w2: ag.w2,
                q: ag.q,
            });
        }
    }
    Ok(grads)
}

/// Row-wise argmax; ties go to the smallest class index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|v| {
            let row = logits.row(v);
            let mut best = 0;
            for (k, &z) in row.iter().enumerate().skip(1) {
                if z > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Class per node with dropout off, taken from the SGA branch for FULL.
pub fn predict(params: &ModelParams, cfg: &VariantConfig, ms: &MessageSet) -> Result<Vec<usize>> {
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = forward(params, cfg, ms, false, &mut rng)?;
    Ok(argmax_rows(trace.output_logits()))
}
