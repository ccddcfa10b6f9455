//! Time-series containers, window slicing, sub-series factorization and
//! min-max scaling.

use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling interval of a series, stored in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Freq {
    seconds: i64,
}

impl Freq {
    pub fn from_seconds(seconds: i64) -> Result<Self> {
        if seconds <= 0 {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {seconds}s"
            )));
        }
        Ok(Self { seconds })
    }

    /// Parses pandas-style frequency strings: `1H`, `H`, `5min`, `15T`, `1D`, `30S`, `1W`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let split = text
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(|| Error::InvalidArgument(format!("frequency '{text}' has no unit")))?;
        let (num, unit) = text.split_at(split);
        let count: i64 = if num.is_empty() {
            1
        } else {
            num.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad frequency '{text}'")))?
        };
        let unit_seconds = match unit {
            "S" | "s" | "sec" => 1,
            "T" | "min" | "m" => 60,
            "H" | "h" => 3600,
            "D" | "d" => 86_400,
            "W" | "w" => 7 * 86_400,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown frequency unit in '{text}'"
                )))
            }
        };
        Self::from_seconds(count * unit_seconds)
    }

    pub fn seconds(&self) -> i64 {
        self.seconds
    }

    pub fn to_string_repr(&self) -> String {
        let s = self.seconds;
        if s % 86_400 == 0 {
            format!("{}D", s / 86_400)
        } else if s % 3600 == 0 {
            format!("{}H", s / 3600)
        } else if s % 60 == 0 {
            format!("{}min", s / 60)
        } else {
            format!("{s}S")
        }
    }
}

/// An identified univariate series with optional per-step covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub id: String,
    pub start: NaiveDateTime,
    pub freq: Freq,
    pub values: Vec<f64>,
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        start: NaiveDateTime,
        freq: Freq,
        values: Vec<f64>,
        covariates: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("series values"));
        }
        if let Some(cov) = &covariates {
            if cov.len() != values.len() {
                return Err(Error::Shape(format!(
                    "covariates have {} steps but values have {}",
                    cov.len(),
                    values.len()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            start,
            freq,
            values,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + chrono::Duration::seconds(self.freq.seconds * index as i64)
    }

    /// Window with conditioning `[start, start+T)` and prediction `[start+T, start+T+N)`.
    pub fn window(&self, start: usize, context: usize, prediction: usize) -> Result<Window> {
        let end = start + context + prediction;
        if end > self.len() {
            return Err(Error::SeriesTooShort {
                len: self.len().saturating_sub(start),
                context,
                prediction,
            });
        }
        Ok(Window {
            conditioning: self.values[start..start + context].to_vec(),
            prediction: self.values[start + context..end].to_vec(),
            covariates: self
                .covariates
                .as_ref()
                .map(|c| c[start..end].to_vec()),
            origin_offset: start,
        })
    }
}

/// A conditioning range followed by a (possibly empty) prediction range.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub conditioning: Vec<f64>,
    pub prediction: Vec<f64>,
    pub covariates: Option<Vec<Vec<f64>>>,
    pub origin_offset: usize,
}

impl Window {
    pub fn new(conditioning: Vec<f64>, prediction: Vec<f64>) -> Self {
        Self {
            conditioning,
            prediction,
            covariates: None,
            origin_offset: 0,
        }
    }

    pub fn context_len(&self) -> usize {
        self.conditioning.len()
    }

    pub fn prediction_len(&self) -> usize {
        self.prediction.len()
    }

    pub fn len(&self) -> usize {
        self.conditioning.len() + self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Conditioning followed by prediction values.
    pub fn values(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.len());
        all.extend_from_slice(&self.conditioning);
        all.extend_from_slice(&self.prediction);
        all
    }
}

/// Maps the generation-order index `k` of a sub-series to its offset in the
/// original window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Regular,
    Backfill,
}

impl Ordering {
    pub fn offset(self, k: usize, num_subseries: usize) -> usize {
        match self {
            Ordering::Regular => k,
            Ordering::Backfill => num_subseries - 1 - k,
        }
    }

    /// Inverse of [`Ordering::offset`]; both maps are involutions on `0..K`.
    pub fn sub_index(self, offset: usize, num_subseries: usize) -> usize {
        self.offset(offset, num_subseries)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::Regular => "regular",
            Ordering::Backfill => "backfill",
        }
    }
}

impl std::str::FromStr for Ordering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Ordering::Regular),
            "backfill" => Ok(Ordering::Backfill),
            other => Err(Error::InvalidArgument(format!("unknown ordering '{other}'"))),
        }
    }
}

/// K aligned lower-frequency sub-series covering one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSeriesBundle {
    pub num_subseries: usize,
    pub ordering: Ordering,
    pub subs: Vec<Vec<f64>>,
    pub context_len: usize,
    pub prediction_len: usize,
}

pub fn check_divisible(context: usize, prediction: usize, k: usize) -> Result<()> {
    if k == 0 || !context.is_multiple_of(k) || !prediction.is_multiple_of(k) {
        return Err(Error::NotDivisible {
            context,
            prediction,
            k,
        });
    }
    Ok(())
}

/// Original-window position of element `j` of sub-series `k`.
#[inline]
pub fn original_index(k: usize, j: usize, num_subseries: usize, ordering: Ordering) -> usize {
    j * num_subseries + ordering.offset(k, num_subseries)
}

pub fn split_subseries(window: &Window, k: usize, ordering: Ordering) -> Result<SubSeriesBundle> {
    check_divisible(window.context_len(), window.prediction_len(), k)?;
    let all = window.values();
    let len = all.len() / k;
    let subs = (0..k)
        .map(|s| {
            (0..len)
                .map(|j| all[original_index(s, j, k, ordering)])
                .collect()
        })
        .collect();
    Ok(SubSeriesBundle {
        num_subseries: k,
        ordering,
        subs,
        context_len: window.context_len() / k,
        prediction_len: window.prediction_len() / k,
    })
}

/// Inverse of [`split_subseries`]; covariates and origin are not carried by bundles.
pub fn merge_subseries(bundle: &SubSeriesBundle) -> Result<Window> {
    let k = bundle.num_subseries;
    if k == 0 || bundle.subs.len() != k {
        return Err(Error::Shape(format!(
            "bundle declares K={} but holds {} sub-series",
            k,
            bundle.subs.len()
        )));
    }
    let expected = bundle.context_len + bundle.prediction_len;
    for (index, sub) in bundle.subs.iter().enumerate() {
        if sub.len() != expected {
            return Err(Error::RaggedSubSeries {
                expected,
                index,
                found: sub.len(),
            });
        }
    }
    let mut all = vec![0.0; expected * k];
    for (s, sub) in bundle.subs.iter().enumerate() {
        for (j, &v) in sub.iter().enumerate() {
            all[original_index(s, j, k, bundle.ordering)] = v;
        }
    }
    let split = bundle.context_len * k;
    let prediction = all.split_off(split);
    Ok(Window::new(all, prediction))
}

/// Reverses every consecutive block of `k` values. An involution.
pub fn reverse_blocks(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || !values.len().is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "length {} not divisible by block size {k}",
            values.len()
        )));
    }
    Ok(values
        .chunks(k)
        .flat_map(|block| block.iter().rev().copied())
        .collect())
}

/// Min-max normalization parameters fitted on a conditioning range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

impl ScaleParams {
    pub fn fit(conditioning: &[f64]) -> Result<Self> {
        if conditioning.is_empty() {
            return Err(Error::Empty("conditioning range for min-max fit"));
        }
        let (min, max) = conditioning
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(Self {
            min,
            max,
            degenerate: min == max,
        })
    }

    #[inline]
    pub fn apply(&self, value: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (value - self.min) / (self.max - self.min)
        }
    }

    #[inline]
    pub fn invert(&self, normalized: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            normalized * (self.max - self.min) + self.min
        }
    }

    /// Units of original value per normalized unit (1 when degenerate).
    pub fn range(&self) -> f64 {
        if self.degenerate {
            1.0
        } else {
            self.max - self.min
        }
    }
}

pub fn minmax_fit(conditioning: &[f64]) -> Result<ScaleParams> {
    ScaleParams::fit(conditioning)
}

pub fn minmax_apply(value: f64, params: &ScaleParams) -> f64 {
    params.apply(value)
}

pub fn minmax_invert(normalized: f64, params: &ScaleParams) -> f64 {
    params.invert(normalized)
}

/// `out[t] = values[t - lag]`, `None` where the lag reaches before the start.
pub fn build_lag_features(values: &[f64], lag_period: usize) -> Result<Vec<Option<f64>>> {
    if lag_period == 0 {
        return Err(Error::InvalidArgument("lag period must be positive".into()));
    }
    Ok((0..values.len())
        .map(|t| t.checked_sub(lag_period).map(|s| values[s]))
        .collect())
}

/// Position-in-day and position-in-week, both in `[0, 1)`. Weeks start on
/// Monday 00:00. Daily or coarser data carries a constant 0 day position.
pub fn seasonal_features(timestamp: NaiveDateTime, freq: Freq) -> [f64; 2] {
    let secs_in_day = timestamp.num_seconds_from_midnight() as f64;
    let day = if freq.seconds() >= 86_400 {
        0.0
    } else {
        secs_in_day / 86_400.0
    };
    let weekday = timestamp.weekday().num_days_from_monday() as f64;
    let week = (weekday * 86_400.0 + secs_in_day) / (7.0 * 86_400.0);
    [day, week]
}

/// Seasonal covariates for every step of a window taken from `series`.
pub fn build_seasonal_covariates(series: &TimeSeries, window: &Window) -> Vec<Vec<f64>> {
    (0..window.len())
        .map(|t| seasonal_features(series.timestamp(window.origin_offset + t), series.freq).to_vec())
        .collect()
}

/// Seeded epoch-wise permutation sampler over `0..count`: every index is
/// drawn exactly once per epoch, then the order is reshuffled.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("nothing to sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            epoch: 0,
            rng,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Iterator for EpochSampler {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let item = self.order[self.cursor];
        self.cursor += 1;
        Some(item)
    }
}

/// Endless stream of training windows drawn without replacement per epoch.
#[derive(Debug, Clone)]
pub struct WindowStream<'a> {
    series: &'a TimeSeries,
    context: usize,
    prediction: usize,
    sampler: EpochSampler,
}

impl WindowStream<'_> {
    pub fn windows_per_epoch(&self) -> usize {
        self.sampler.len()
    }

    pub fn epoch(&self) -> usize {
        self.sampler.epoch()
    }
}

impl Iterator for WindowStream<'_> {
    type Item = Window;
    fn next(&mut self) -> Option<Window> {
        let start = self.sampler.next()?;
        self.series.window(start, self.context, self.prediction).ok()
    }
}

pub fn slice_windows(
    series: &TimeSeries,
    context: usize,
    prediction: usize,
    seed: u64,
) -> Result<WindowStream<'_>> {
    if context == 0 {
        return Err(Error::InvalidArgument("conditioning length must be positive".into()));
    }
    if series.len() < context + prediction {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            context,
            prediction,
        });
    }
    let count = series.len() - context - prediction + 1;
    Ok(WindowStream {
        series,
        context,
        prediction,
        sampler: EpochSampler::new(count, seed)?,
    })
}
