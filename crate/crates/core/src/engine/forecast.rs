use serde::{Deserialize, Serialize};

use super::model::SutraNetModel;
use crate::error::{Error, Result};
use crate::metrics::{sample_quantiles, Forecaster, QUANTILE_LEVELS};
use crate::series::{reverse_blocks, Window};

/// Monte-Carlo forecast: `samples[rollout][horizon]` in original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub samples: Vec<Vec<f64>>,
}

impl ForecastDistribution {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("forecast samples"))?;
        if samples.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Shape("ragged sample rows".into()));
        }
        Ok(Self { samples })
    }

    pub fn horizon(&self) -> usize {
        self.samples[0].len()
    }

    pub fn num_rollouts(&self) -> usize {
        self.samples.len()
    }

    /// `[alpha][horizon]` empirical quantiles with linear interpolation.
    pub fn quantiles(&self, alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
        sample_quantiles(&self.samples, alphas)
    }

    pub fn median(&self) -> Result<Vec<f64>> {
        Ok(self.quantiles(&[0.5])?.remove(0))
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        (0..self.horizon())
            .map(|h| self.samples.iter().map(|r| r[h]).sum::<f64>() / n)
            .collect()
    }
}

impl SutraNetModel {
    /// Samples `n_rollouts` futures of the window's conditioning range.
    pub fn forecast(&self, window: &Window, n_rollouts: usize, seed: u64) -> Result<ForecastDistribution> {
        if n_rollouts == 0 {
            return Err(Error::InvalidArgument("need at least one rollout".into()));
        }
        ForecastDistribution::new(self.rollouts(window, n_rollouts, seed, None)?)
    }
}

/// Reverses every block of `k` consecutive values of both ranges.
pub fn backfill_standard_transform(window: &Window, k: usize) -> Result<Window> {
    let t = window.context_len();
    if k == 0 || !t.is_multiple_of(k) || !window.prediction_len().is_multiple_of(k) {
        return Err(Error::NotDivisible {
            context: t,
            prediction: window.prediction_len(),
            k,
        });
    }
    let all = reverse_blocks(&window.values(), k)?;
    let mut out = window.clone();
    out.conditioning = all[..t].to_vec();
    out.prediction = all[t..].to_vec();
    if let Some(c) = &window.covariates {
        out.covariates = Some(c.chunks(k).flat_map(|b| b.iter().rev().cloned()).collect());
    }
    Ok(out)
}

/// Two-stage forecast: `low` samples the positions `p % K == K - 1`, then
/// `high` fills the rest with those positions pinned and visible as
/// look-ahead inputs. Rollouts are weighted uniformly.
pub fn low2highfreq_forecast(
    low: &SutraNetModel,
    high: &SutraNetModel,
    window: &Window,
    n_rollouts: usize,
    seed: u64,
) -> Result<ForecastDistribution> {
    let period = high.config.lookahead_period.unwrap_or(1);
    let low_period = low.config.subsample_period.unwrap_or(1);
    let compatible = period == low_period
        && high.config.context_len == low.config.context_len
        && high.config.prediction_len == low.config.prediction_len;
    if !compatible {
        return Err(Error::InvalidArgument(format!(
            "incompatible low/high models: look-ahead period {period}, subsample period {low_period}"
        )));
    }
    if period == 1 {
        return high.forecast(window, n_rollouts, seed);
    }
    let low_dist = low.forecast(window, n_rollouts, seed)?;
    let n = high.config.prediction_len;
    let fixed: Vec<Vec<Option<f64>>> = low_dist
        .samples
        .iter()
        .map(|row| {
            let mut pinned = vec![None; n];
            for (j, &v) in row.iter().enumerate() {
                pinned[j * period + period - 1] = Some(v);
            }
            pinned
        })
        .collect();
    let samples = high.rollouts(window, n_rollouts, seed.wrapping_add(1), Some(&fixed))?;
    ForecastDistribution::new(samples)
}

/// Adapts a model to the evaluation harness.
pub struct ModelForecaster<'a> {
    pub model: &'a SutraNetModel,
    pub rollouts: usize,
    pub seed: u64,
}

impl Forecaster for ModelForecaster<'_> {
    fn quantile_tracks(&self, window: &Window, prediction_len: usize) -> Result<Vec<Vec<f64>>> {
        if prediction_len != self.model.config.prediction_len {
            return Err(Error::InvalidArgument(format!(
                "model predicts {} steps, {} requested",
                self.model.config.prediction_len, prediction_len
            )));
        }
        self.model.forecast(window, self.rollouts, self.seed)?.quantiles(&QUANTILE_LEVELS)
    }
}

/// Adapts a low/high pair to the evaluation harness.
pub struct Low2HighForecaster<'a> {
    pub low: &'a SutraNetModel,
    pub high: &'a SutraNetModel,
    pub rollouts: usize,
    pub seed: u64,
}

impl Forecaster for Low2HighForecaster<'_> {
    fn quantile_tracks(&self, window: &Window, _prediction_len: usize) -> Result<Vec<Vec<f64>>> {
        low2highfreq_forecast(self.low, self.high, window, self.rollouts, self.seed)?.quantiles(&QUANTILE_LEVELS)
    }
}
