//! Run configuration as a flat `key = value` text file.
//!
//! `#` starts a comment that runs to the end of the line; blank lines are
//! ignored. Every key has a default; unknown keys are errors. `lag_period`,
//! `block_reverse` and `low2high_period` use 0 for "off".

use std::path::Path;
use std::str::FromStr;

use crate::engine::{GenerationMode, Head, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::series::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// K sub-series networks (K=1 is the standard model).
    SutraNet,
    /// A subsampled low-frequency model plus a constrained high-frequency model.
    Low2High,
}

impl System {
    pub fn as_str(self) -> &'static str {
        match self {
            System::SutraNet => "sutranet",
            System::Low2High => "low2high",
        }
    }
}

impl FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sutranet" => Ok(System::SutraNet),
            "low2high" => Ok(System::Low2High),
            other => Err(Error::InvalidArgument(format!("unknown system '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: System,
    pub num_subseries: usize,
    pub ordering: Ordering,
    pub mode: GenerationMode,
    pub layers: usize,
    pub hidden: usize,
    pub context_len: usize,
    pub prediction_len: usize,
    pub levels: usize,
    pub bins: usize,
    /// 0 selects the C2F head; otherwise a flat head with this many bins.
    pub flat_bins: usize,
    pub input_dropout: f64,
    pub inter_layer_dropout: f64,
    pub lag_period: usize,
    pub seasonal_covariates: bool,
    pub block_reverse: usize,
    pub low2high_period: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub windows_per_checkpoint: usize,
    pub max_checkpoints: usize,
    pub patience: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub val_rollouts: usize,
    pub val_windows: usize,
    pub test_rollouts: usize,
    pub val_len: usize,
    pub test_len: usize,
    pub binning_windows: usize,
    pub eval_stride: usize,
    pub seed: u64,
    pub val_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            system: System::SutraNet,
            num_subseries: m.num_subseries,
            ordering: m.ordering,
            mode: m.mode,
            layers: m.layers,
            hidden: m.hidden,
            context_len: m.context_len,
            prediction_len: m.prediction_len,
            levels: m.levels,
            bins: m.bins,
            flat_bins: 0,
            input_dropout: m.input_dropout,
            inter_layer_dropout: m.inter_layer_dropout,
            lag_period: 0,
            seasonal_covariates: false,
            block_reverse: 0,
            low2high_period: 0,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            windows_per_checkpoint: t.windows_per_checkpoint,
            max_checkpoints: t.max_checkpoints,
            patience: t.patience,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            val_rollouts: t.val_rollouts,
            val_windows: t.val_windows,
            test_rollouts: 500,
            val_len: 168,
            test_len: 168,
            binning_windows: 2048,
            eval_stride: 1,
            seed: t.seed,
            val_seed: t.val_seed,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Format(format!("invalid value '{value}' for '{key}'"))),
    }
}

fn nonzero(v: usize) -> Option<usize> {
    (v > 0).then_some(v)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "system" => self.system = v.parse()?,
            "num_subseries" => self.num_subseries = parse(key, v)?,
            "ordering" => self.ordering = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "layers" => self.layers = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "context_len" => self.context_len = parse(key, v)?,
            "prediction_len" => self.prediction_len = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "flat_bins" => self.flat_bins = parse(key, v)?,
            "input_dropout" => self.input_dropout = parse(key, v)?,
            "inter_layer_dropout" => self.inter_layer_dropout = parse(key, v)?,
            "lag_period" => self.lag_period = parse(key, v)?,
            "seasonal_covariates" => self.seasonal_covariates = parse_bool(key, v)?,
            "block_reverse" => self.block_reverse = parse(key, v)?,
            "low2high_period" => self.low2high_period = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "windows_per_checkpoint" => self.windows_per_checkpoint = parse(key, v)?,
            "max_checkpoints" => self.max_checkpoints = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "val_rollouts" => self.val_rollouts = parse(key, v)?,
            "val_windows" => self.val_windows = parse(key, v)?,
            "test_rollouts" => self.test_rollouts = parse(key, v)?,
            "val_len" => self.val_len = parse(key, v)?,
            "test_len" => self.test_len = parse(key, v)?,
            "binning_windows" => self.binning_windows = parse(key, v)?,
            "eval_stride" => self.eval_stride = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "val_seed" => self.val_seed = parse(key, v)?,
            other => return Err(Error::Format(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected 'key = value'", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Format(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every key in a fixed order; floats use the shortest exact form.
    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("system", self.system.as_str().into()),
            ("num_subseries", self.num_subseries.to_string()),
            ("ordering", self.ordering.as_str().into()),
            ("mode", self.mode.as_str().into()),
            ("layers", self.layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("context_len", self.context_len.to_string()),
            ("prediction_len", self.prediction_len.to_string()),
            ("levels", self.levels.to_string()),
            ("bins", self.bins.to_string()),
            ("flat_bins", self.flat_bins.to_string()),
            ("input_dropout", format!("{:?}", self.input_dropout)),
            ("inter_layer_dropout", format!("{:?}", self.inter_layer_dropout)),
            ("lag_period", self.lag_period.to_string()),
            ("seasonal_covariates", self.seasonal_covariates.to_string()),
            ("block_reverse", self.block_reverse.to_string()),
            ("low2high_period", self.low2high_period.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("windows_per_checkpoint", self.windows_per_checkpoint.to_string()),
            ("max_checkpoints", self.max_checkpoints.to_string()),
            ("patience", self.patience.to_string()),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("val_rollouts", self.val_rollouts.to_string()),
            ("val_windows", self.val_windows.to_string()),
            ("test_rollouts", self.test_rollouts.to_string()),
            ("val_len", self.val_len.to_string()),
            ("test_len", self.test_len.to_string()),
            ("binning_windows", self.binning_windows.to_string()),
            ("eval_stride", self.eval_stride.to_string()),
            ("seed", self.seed.to_string()),
            ("val_seed", self.val_seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn base_model(&self, covariate_dims: usize, scaled_covariate_dims: usize) -> ModelConfig {
        ModelConfig {
            num_subseries: self.num_subseries,
            ordering: self.ordering,
            mode: self.mode,
            hidden: self.hidden,
            layers: self.layers,
            levels: self.levels,
            bins: self.bins,
            head: if self.flat_bins > 0 {
                Head::Flat { bins: self.flat_bins }
            } else {
                Head::C2f
            },
            context_len: self.context_len,
            prediction_len: self.prediction_len,
            inter_layer_dropout: self.inter_layer_dropout,
            input_dropout: self.input_dropout,
            lag_period: nonzero(self.lag_period),
            covariate_dims,
            scaled_covariate_dims,
            lookahead_period: None,
            block_reverse: nonzero(self.block_reverse),
            subsample_period: None,
        }
    }

    /// Model configurations: one for `sutranet`, the (low, high) pair for
    /// `low2high`.
    pub fn model_configs(&self, covariate_dims: usize, scaled_covariate_dims: usize) -> Result<Vec<ModelConfig>> {
        let base = self.base_model(covariate_dims, scaled_covariate_dims);
        let configs = match self.system {
            System::SutraNet => vec![base],
            System::Low2High => {
                let p = self.low2high_period;
                if p < 2 || self.num_subseries != 1 {
                    return Err(Error::InvalidArgument(
                        "low2high needs low2high_period >= 2 and num_subseries = 1".into(),
                    ));
                }
                let low = ModelConfig {
                    subsample_period: Some(p),
                    lag_period: None,
                    ..base.clone()
                };
                let high = ModelConfig {
                    lookahead_period: Some(p),
                    ..base
                };
                vec![low, high]
            }
        };
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            windows_per_checkpoint: self.windows_per_checkpoint,
            max_checkpoints: self.max_checkpoints,
            patience: self.patience,
            lr_decay: self.lr_decay,
            clip_norm: self.clip_norm,
            val_rollouts: self.val_rollouts,
            val_windows: self.val_windows,
            seed: self.seed,
            val_seed: self.val_seed,
        }
    }
}
