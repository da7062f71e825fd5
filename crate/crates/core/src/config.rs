//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::density::ClassNormalization;
use crate::error::{Error, Result};
use crate::sampler::BatchPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossKind {
    Contrastive,
    Triplet,
    Npair,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Contrastive, LossKind::Triplet, LossKind::Npair];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Contrastive => "contrastive",
            Self::Triplet => "triplet",
            Self::Npair => "npair",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the base loss is scaled before the regularizer is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseNormalization {
    /// Plain sum over mined units.
    None,
    /// Divide by the number of mined pairs/triplets/tuplets.
    Units,
    /// Divide by the number of rows in the batch.
    #[default]
    Batch,
}

impl BaseNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Units => "units",
            Self::Batch => "batch",
        }
    }
}

impl FromStr for BaseNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "units" => Ok(Self::Units),
            "batch" => Ok(Self::Batch),
            other => Err(Error::Config(format!(
                "unknown base normalization {other:?} (expected none, units or batch)"
            ))),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(Self::Contrastive),
            "triplet" => Ok(Self::Triplet),
            "npair" | "n-pair" => Ok(Self::Npair),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected contrastive, triplet or npair)"
            ))),
        }
    }
}

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lambda: f64,
    pub eta: f64,
    pub margin: f64,
    pub alpha_init: f64,
    /// Weight of the inter-class density-ratio penalty (0 disables it).
    pub penalty_weight: f64,
    pub class_normalization: ClassNormalization,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub accumulate: bool,
    pub batch_capacity: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    /// Multiplier on the learning rate for the target densities.
    pub alpha_lr_scale: f64,
    pub iterations: u64,
    pub seed: u64,
    pub triplets_per_anchor: usize,
    pub base_normalization: BaseNormalization,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Contrastive,
            lambda: 10.0,
            eta: 0.5,
            margin: 1.0,
            alpha_init: 0.5,
            penalty_weight: 1.0,
            class_normalization: ClassNormalization::Batch,
            classes_per_batch: 10,
            samples_per_class: 10,
            accumulate: false,
            batch_capacity: 100,
            hidden: vec![256],
            embedding_dim: 128,
            learning_rate: 1e-3,
            alpha_lr_scale: 1.0,
            iterations: 3000,
            seed: 0,
            triplets_per_anchor: 5,
            base_normalization: BaseNormalization::Batch,
            log_every: 50,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn batch_plan(&self) -> BatchPlan {
        BatchPlan {
            classes_per_batch: self.classes_per_batch,
            samples_per_class: self.samples_per_class,
            accumulate: self.accumulate,
            capacity: self.batch_capacity,
        }
    }

    /// Layer widths from input to embedding.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lambda", self.lambda)?;
        nonneg("alpha_init", self.alpha_init)?;
        nonneg("penalty_weight", self.penalty_weight)?;
        nonneg("alpha_lr_scale", self.alpha_lr_scale)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.loss == LossKind::Triplet && self.triplets_per_anchor == 0 {
            return Err(Error::Config("triplets_per_anchor must be >= 1".into()));
        }
        self.batch_plan().validate()
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "eta = {:?}", self.eta);
        let _ = writeln!(s, "margin = {:?}", self.margin);
        let _ = writeln!(s, "alpha_init = {:?}", self.alpha_init);
        let _ = writeln!(s, "penalty_weight = {:?}", self.penalty_weight);
        let _ = writeln!(s, "class_normalization = {}", self.class_normalization.as_str());
        let _ = writeln!(s, "classes_per_batch = {}", self.classes_per_batch);
        let _ = writeln!(s, "samples_per_class = {}", self.samples_per_class);
        let _ = writeln!(s, "accumulate = {}", self.accumulate);
        let _ = writeln!(s, "batch_capacity = {}", self.batch_capacity);
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "alpha_lr_scale = {:?}", self.alpha_lr_scale);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "triplets_per_anchor = {}", self.triplets_per_anchor);
        let _ = writeln!(s, "base_normalization = {}", self.base_normalization.as_str());
        let _ = writeln!(s, "log_every = {}", self.log_every);
        s
    }

    /// Applies one `key = value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "loss" => self.loss = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "alpha_init" => self.alpha_init = parse(key, value)?,
            "penalty_weight" => self.penalty_weight = parse(key, value)?,
            "class_normalization" => self.class_normalization = value.parse()?,
            "classes_per_batch" => self.classes_per_batch = parse(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "accumulate" => self.accumulate = parse_bool(key, value)?,
            "batch_capacity" => self.batch_capacity = parse(key, value)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "alpha_lr_scale" => self.alpha_lr_scale = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "triplets_per_anchor" => self.triplets_per_anchor = parse(key, value)?,
            "base_normalization" => self.base_normalization = value.parse()?,
            "log_every" => self.log_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every setting in `text` on top of `self`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }
}
