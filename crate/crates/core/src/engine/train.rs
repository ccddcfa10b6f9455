use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forecast::ModelForecaster;
use super::model::{ModelConfig, SubModel, SutraNetModel};
use crate::binning::{fit_binning, BinningSpec};
use crate::dataset::{WindowRef, WindowSource};
use crate::error::{Error, Result};
use crate::metrics::{sample_quantiles, Accumulator, Forecaster, QUANTILE_LEVELS};
use crate::seqnet::{clip_global_norm, AdamState};
use crate::series::{original_index, EpochSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub windows_per_checkpoint: usize,
    pub max_checkpoints: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub val_rollouts: usize,
    pub val_windows: usize,
    pub seed: u64,
    /// Seed of the validation rollouts, kept apart from the training stream.
    pub val_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            batch_size: 128,
            windows_per_checkpoint: 8192,
            max_checkpoints: 750,
            patience: 37,
            lr_decay: 0.99,
            clip_norm: 10.0,
            val_rollouts: 25,
            val_windows: 8192,
            seed: 0,
            val_seed: 0x5_EED0_F7A1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub checkpoint: usize,
    /// Mean teacher-forced NLL per predicted point over the checkpoint.
    pub train_nll: f64,
    pub val_nd: Option<f64>,
    pub learning_rate: f64,
    pub improved: bool,
    /// Evaluations since the last improvement, after this checkpoint.
    pub stale_evals: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<CheckpointRecord>,
    pub best_checkpoint: Option<usize>,
    pub best_val_nd: Option<f64>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Canonical text form, used for digests.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&format!(
                "{} {:e} {} {:e} {} {}\n",
                r.checkpoint,
                r.train_nll,
                r.val_nd.map_or("-".to_string(), |v| format!("{v:e}")),
                r.learning_rate,
                r.improved,
                r.stale_evals
            ));
        }
        s.push_str(&format!("best {:?} {:?} {}\n", self.best_checkpoint, self.best_val_nd, self.stopped_early));
        s
    }
}

/// Early-stopping bookkeeping on validation ND (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<f64>,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an evaluation; returns whether it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        let improved = self.best.is_none_or(|b| score < b);
        if improved {
            self.best = Some(score);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

/// Fits the shared binning extent on sub-series-normalized values of up to
/// `max_windows` training windows (evenly spaced over `refs`).
pub fn fit_dataset_binning(
    config: &ModelConfig,
    source: &WindowSource<'_>,
    refs: &[WindowRef],
    max_windows: usize,
) -> Result<BinningSpec> {
    if refs.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    let stride = refs.len().div_ceil(max_windows.max(1));
    let k_count = config.num_subseries;
    let mut pooled = Vec::new();
    for r in refs.iter().step_by(stride) {
        let prep = config.prepare(&source.window(*r)?, None)?;
        let steps = (prep.context_len + prep.prediction_len) / k_count;
        for k in 0..k_count {
            for t in 0..steps {
                let v = prep.values[original_index(k, t, k_count, config.ordering)];
                pooled.push(prep.scales[k].apply(v));
            }
        }
    }
    fit_binning(&pooled, config.levels, config.bins)
}

/// Pooled validation ND of `model` on `refs` using median forecasts.
pub fn validation_nd(model: &SutraNetModel, source: &WindowSource<'_>, refs: &[WindowRef], rollouts: usize, seed: u64) -> Result<f64> {
    let f = ModelForecaster { model, rollouts, seed };
    let mut acc = Accumulator::default();
    for r in refs {
        let window = source.window(*r)?;
        let mut input = window.clone();
        input.prediction.clear();
        let tracks = if model.config.lookahead_period.is_some() {
            // the high-frequency half is validated with its constraints at truth
            let mut pinned = vec![None; window.prediction_len()];
            for h in model.constrained_positions()? {
                pinned[h] = Some(window.prediction[h]);
            }
            let rows = model.rollouts(&input, rollouts, seed, Some(&vec![pinned; rollouts]))?;
            sample_quantiles(&rows, &QUANTILE_LEVELS)?
        } else {
            f.quantile_tracks(&input, window.prediction_len())?
        };
        let actual: Vec<f64> = match model.config.subsample_period {
            Some(p) => window.prediction.iter().skip(p - 1).step_by(p).copied().collect(),
            None => window.prediction.clone(),
        };
        acc.add(&tracks, &actual)?;
    }
    Ok(acc.report()?.nd)
}

/// Minibatch training with one optimizer per sub-model, learning-rate
/// decay per checkpoint and early stopping on validation ND. The best
/// parameters seen are kept. Without validation windows every checkpoint
/// counts as an improvement.
pub fn train(
    model: &mut SutraNetModel,
    source: &WindowSource<'_>,
    train_refs: &[WindowRef],
    val_refs: &[WindowRef],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_with_progress(model, source, train_refs, val_refs, cfg, |_| {})
}

pub fn train_with_progress<P: FnMut(&CheckpointRecord)>(
    model: &mut SutraNetModel,
    source: &WindowSource<'_>,
    train_refs: &[WindowRef],
    val_refs: &[WindowRef],
    cfg: &TrainConfig,
    mut progress: P,
) -> Result<TrainLog> {
    if cfg.batch_size == 0 || cfg.windows_per_checkpoint == 0 {
        return Err(Error::InvalidArgument("batch size and windows per checkpoint must be positive".into()));
    }
    if source.context != model.config.context_len || source.prediction != model.config.prediction_len {
        return Err(Error::InvalidArgument(format!(
            "windows are {}+{}, model expects {}+{}",
            source.context, source.prediction, model.config.context_len, model.config.prediction_len
        )));
    }
    let mut sampler = EpochSampler::new(train_refs.len(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9));
    let mut optimizers: Vec<AdamState> = model
        .nets
        .iter()
        .map(|n| AdamState::new(&n.blocks(), cfg.learning_rate, cfg.weight_decay))
        .collect();
    let (_, n_model) = model.config.model_lengths()?;
    let scored = n_model - model.constrained_positions()?.len();
    let points_per_window = (scored.max(1)) as f64;
    let batches = cfg.windows_per_checkpoint.div_ceil(cfg.batch_size);

    let mut log = TrainLog::default();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best: Option<Vec<SubModel>> = None;
    model.mark_trained();
    for checkpoint in 0..cfg.max_checkpoints {
        let mut loss_sum = 0.0;
        let mut windows_seen = 0usize;
        for b in 0..batches {
            let size = cfg.batch_size.min(cfg.windows_per_checkpoint - b * cfg.batch_size);
            let weight = 1.0 / (size as f64 * points_per_window);
            let mut grads = model.zero_grads();
            for _ in 0..size {
                let idx = sampler.next().expect("sampler is endless");
                let window = source.window(train_refs[idx])?;
                loss_sum += model
                    .accumulate_gradients(&window, weight, &mut grads, &mut rng)
                    .map_err(|e| Error::NonFinite(format!("checkpoint {checkpoint}, batch {b}: {e}")))?
                    / weight
                    / points_per_window;
                windows_seen += 1;
            }
            for ((net, grad), opt) in model.nets.iter_mut().zip(grads.iter_mut()).zip(&mut optimizers) {
                let mut g = grad.blocks_mut();
                clip_global_norm(&mut g, cfg.clip_norm);
                let g: Vec<&[f64]> = g.into_iter().map(|b| &*b).collect();
                opt.adam_step(&mut net.blocks_mut(), &g)?;
            }
        }
        let train_nll = loss_sum / windows_seen as f64;
        if !train_nll.is_finite() {
            return Err(Error::NonFinite(format!("training loss at checkpoint {checkpoint}")));
        }
        let val_nd = if val_refs.is_empty() {
            None
        } else {
            Some(validation_nd(model, source, val_refs, cfg.val_rollouts, cfg.val_seed)?)
        };
        let improved = match val_nd {
            Some(nd) => stopper.observe(nd),
            None => true,
        };
        if improved {
            best = Some(model.nets.clone());
            log.best_checkpoint = Some(checkpoint);
            log.best_val_nd = val_nd;
        }
        let record = CheckpointRecord {
            checkpoint,
            train_nll,
            val_nd,
            learning_rate: optimizers[0].learning_rate,
            improved,
            stale_evals: stopper.stale,
        };
        progress(&record);
        log.records.push(record);
        for opt in &mut optimizers {
            opt.learning_rate *= cfg.lr_decay;
        }
        if stopper.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    if let Some(nets) = best {
        model.nets = nets;
    }
    Ok(log)
}
