//! Flat `key = value` run configuration. Layers apply in order
//! default → config file → command-line overrides; unknown keys are rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::message_agg::MessageAggKind;
use crate::model::{ReferenceSource, Variant, VariantConfig};
use crate::pipeline::PartitionScheme;
use crate::propagation::OperatorKind;
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: VariantConfig,
    pub train: TrainConfig,
    /// Simulated precompute workers.
    pub workers: usize,
    pub partition: PartitionScheme,
    /// Nodes per precompute batch.
    pub precompute_batch: usize,
    pub normalize_features: bool,
    pub trials: usize,
    /// `false` selects plain SGD.
    pub use_adam: bool,
    /// Adam `(β₁, β₂, ε)`; kept even while SGD is selected.
    pub adam: (f64, f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: VariantConfig::default(),
            train: TrainConfig::default(),
            workers: 1,
            partition: PartitionScheme::Range,
            precompute_batch: 1024,
            normalize_features: true,
            trials: 10,
            use_adam: true,
            adam: (0.9, 0.999, 1e-8),
        }
    }
}

/// Every key with a one-line description. Defaults come from `RunConfig::default()`.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "gu | gmu | full"),
    ("agg", "graph aggregator: aug_norm_adj | random_walk | ppr | triangle"),
    ("restart_alpha", "ppr restart probability in (0, 1], or 'none'"),
    ("message_agg", "concat | mean_pool | max_pool | gating (gmu only); for full, the non-adaptive branch"),
    ("steps", "propagation depth T"),
    ("hidden", "comma-separated hidden widths, empty for none"),
    ("dropout", "dropout probability in [0, 1)"),
    ("reference", "attention reference: last_hidden | logits"),
    ("attention_hidden", "attention projection width"),
    ("epochs", "planned training epochs"),
    ("batch_size", "training batch size"),
    ("lr", "learning rate"),
    ("weight_decay", "L2 penalty added to gradients"),
    ("optimizer", "sgd | adam"),
    ("beta1", "adam first-moment decay"),
    ("beta2", "adam second-moment decay"),
    ("adam_eps", "adam denominator epsilon"),
    ("patience", "epochs without validation improvement before stopping"),
    ("seed", "base random seed"),
    ("eval_every", "validate every n epochs"),
    ("workers", "simulated precompute workers"),
    ("partition", "range | hash"),
    ("precompute_batch", "nodes per precompute batch"),
    ("normalize_features", "row-normalise features on load: true | false"),
    ("trials", "training runs for bench"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::input(format!("{key} = '{value}': {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let v = &mut self.variant;
        let t = &mut self.train;
        match key {
            "variant" => v.variant = parse::<Variant>(key, value)?,
            "agg" => v.graph_agg = parse::<OperatorKind>(key, value)?,
            "restart_alpha" => {
                v.restart_alpha = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "message_agg" => v.message_agg = parse::<MessageAggKind>(key, value)?,
            "steps" => v.steps = parse(key, value)?,
            "hidden" => {
                v.hidden = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "dropout" => v.dropout = parse(key, value)?,
            "reference" => v.reference = parse::<ReferenceSource>(key, value)?,
            "attention_hidden" => v.attention_hidden = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "optimizer" => {
                self.use_adam = matches!(parse::<OptimizerKind>(key, value)?, OptimizerKind::Adam { .. })
            }
            "beta1" => self.adam.0 = parse(key, value)?,
            "beta2" => self.adam.1 = parse(key, value)?,
            "adam_eps" => self.adam.2 = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "partition" => self.partition = parse::<PartitionScheme>(key, value)?,
            "precompute_batch" => self.precompute_batch = parse(key, value)?,
            "normalize_features" => self.normalize_features = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            _ => return Err(Error::input(format!("unknown configuration key '{key}'"))),
        }
        self.train.optimizer = if self.use_adam {
            let (beta1, beta2, eps) = self.adam;
            OptimizerKind::Adam { beta1, beta2, eps }
        } else {
            OptimizerKind::Sgd
        };
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let v = &self.variant;
        let t = &self.train;
        Ok(match key {
            "variant" => v.variant.to_string(),
            "agg" => v.graph_agg.to_string(),
            "restart_alpha" => v.restart_alpha.map_or("none".into(), |a| a.to_string()),
            "message_agg" => v.message_agg.to_string(),
            "steps" => v.steps.to_string(),
            "hidden" => v.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
            "dropout" => v.dropout.to_string(),
            "reference" => v.reference.to_string(),
            "attention_hidden" => v.attention_hidden.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.learning_rate.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "optimizer" => (if self.use_adam { "adam" } else { "sgd" }).to_string(),
            "beta1" => self.adam.0.to_string(),
            "beta2" => self.adam.1.to_string(),
            "adam_eps" => self.adam.2.to_string(),
            "patience" => t.patience.to_string(),
            "seed" => t.seed.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "workers" => self.workers.to_string(),
            "partition" => self.partition.to_string(),
            "precompute_batch" => self.precompute_batch.to_string(),
            "normalize_features" => self.normalize_features.to_string(),
            "trials" => self.trials.to_string(),
            _ => return Err(Error::input(format!("unknown configuration key '{key}'"))),
        })
    }

    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_config_text(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// default → `file` → `overrides`.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            cfg.apply_file(text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("listed keys are known");
            let _ = writeln!(s, "# {doc}\n{key} = {value}");
        }
        s
    }

    pub fn check(&self) -> Result<()> {
        self.variant.check()?;
        self.train.check()?;
        if self.workers == 0 || self.precompute_batch == 0 || self.trials == 0 {
            return Err(Error::config("workers, precompute_batch and trials must be at least 1"));
        }
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::input(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::input(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
