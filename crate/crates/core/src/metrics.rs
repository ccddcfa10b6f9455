//! Forecast metrics: pinball loss, quantile loss, wQL, ND, and pooled
//! rolling evaluation.

use serde::{Deserialize, Serialize};

use crate::binning::percentile_sorted;
use crate::error::{Error, Result};
use crate::series::{TimeSeries, Window};

/// The nine evaluation quantile levels 0.1, 0.2, ..., 0.9.
pub const QUANTILE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Index of the median in [`QUANTILE_LEVELS`].
pub const MEDIAN_INDEX: usize = 4;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("quantile level {alpha} outside (0, 1)")))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{a} forecasts for {b} actuals")))
    }
}

/// `(alpha - 1[y < q]) * (y - q)`.
pub fn pinball(alpha: f64, forecast: f64, actual: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(pinball_unchecked(alpha, forecast, actual))
}

#[inline]
fn pinball_unchecked(alpha: f64, forecast: f64, actual: f64) -> f64 {
    let indicator = if actual < forecast { 1.0 } else { 0.0 };
    (alpha - indicator) * (actual - forecast)
}

fn abs_sum(actuals: &[f64]) -> Result<f64> {
    let denom: f64 = actuals.iter().map(|y| y.abs()).sum();
    if denom > 0.0 {
        Ok(denom)
    } else {
        Err(Error::InvalidArgument("sum of |actuals| is zero".into()))
    }
}

/// `2 * sum pinball / sum |y|`.
pub fn quantile_loss(alpha: f64, forecasts: &[f64], actuals: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    check_lengths(forecasts.len(), actuals.len())?;
    let denom = abs_sum(actuals)?;
    let num: f64 = forecasts
        .iter()
        .zip(actuals)
        .map(|(&q, &y)| pinball_unchecked(alpha, q, y))
        .sum();
    Ok(2.0 * num / denom)
}

/// Mean of the quantile losses at [`QUANTILE_LEVELS`]; `tracks[i]` is the
/// forecast for `QUANTILE_LEVELS[i]`.
pub fn wql(tracks: &[Vec<f64>], actuals: &[f64]) -> Result<f64> {
    check_lengths(tracks.len(), QUANTILE_LEVELS.len())?;
    let mut total = 0.0;
    for (track, &alpha) in tracks.iter().zip(&QUANTILE_LEVELS) {
        total += quantile_loss(alpha, track, actuals)?;
    }
    Ok(total / QUANTILE_LEVELS.len() as f64)
}

/// `sum |y - median| / sum |y|`.
pub fn nd(medians: &[f64], actuals: &[f64]) -> Result<f64> {
    check_lengths(medians.len(), actuals.len())?;
    let denom = abs_sum(actuals)?;
    let num: f64 = medians.iter().zip(actuals).map(|(m, y)| (y - m).abs()).sum();
    Ok(num / denom)
}

/// Per-horizon empirical quantiles (type 7) of a sample matrix
/// `samples[rollout][horizon]`; output is `[alpha][horizon]`.
pub fn sample_quantiles(samples: &[Vec<f64>], alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
    let first = samples.first().ok_or(Error::Empty("forecast samples"))?;
    let horizon = first.len();
    if samples.iter().any(|r| r.len() != horizon) {
        return Err(Error::Shape("ragged sample rows".into()));
    }
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidArgument(format!("quantile level {a} outside [0, 1]")));
        }
    }
    let mut out = vec![Vec::with_capacity(horizon); alphas.len()];
    let mut column = Vec::with_capacity(samples.len());
    for h in 0..horizon {
        column.clear();
        column.extend(samples.iter().map(|r| r[h]));
        column.sort_by(|a, b| a.total_cmp(b));
        for (track, &a) in out.iter_mut().zip(alphas) {
            track.push(percentile_sorted(&column, a));
        }
    }
    Ok(out)
}

/// Anything that maps a conditioning window to quantile tracks at
/// [`QUANTILE_LEVELS`] over `prediction_len` steps.
pub trait Forecaster {
    fn quantile_tracks(&self, window: &Window, prediction_len: usize) -> Result<Vec<Vec<f64>>>;
}

/// Pooled numerators and denominators; merge with [`Accumulator::merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    pub abs_error: f64,
    pub abs_actual: f64,
    pub pinball: [f64; 9],
    pub horizon_abs_error: Vec<f64>,
    pub horizon_abs_actual: Vec<f64>,
    pub windows: usize,
    pub points: usize,
}

impl Accumulator {
    pub fn add(&mut self, tracks: &[Vec<f64>], actuals: &[f64]) -> Result<()> {
        check_lengths(tracks.len(), QUANTILE_LEVELS.len())?;
        for t in tracks {
            check_lengths(t.len(), actuals.len())?;
        }
        if self.horizon_abs_error.len() < actuals.len() {
            self.horizon_abs_error.resize(actuals.len(), 0.0);
            self.horizon_abs_actual.resize(actuals.len(), 0.0);
        }
        for (h, &y) in actuals.iter().enumerate() {
            let err = (y - tracks[MEDIAN_INDEX][h]).abs();
            self.abs_error += err;
            self.abs_actual += y.abs();
            self.horizon_abs_error[h] += err;
            self.horizon_abs_actual[h] += y.abs();
            for (i, &alpha) in QUANTILE_LEVELS.iter().enumerate() {
                self.pinball[i] += pinball_unchecked(alpha, tracks[i][h], y);
            }
        }
        self.windows += 1;
        self.points += actuals.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.abs_error += other.abs_error;
        self.abs_actual += other.abs_actual;
        for (a, b) in self.pinball.iter_mut().zip(&other.pinball) {
            *a += b;
        }
        if self.horizon_abs_error.len() < other.horizon_abs_error.len() {
            self.horizon_abs_error.resize(other.horizon_abs_error.len(), 0.0);
            self.horizon_abs_actual.resize(other.horizon_abs_actual.len(), 0.0);
        }
        for (h, (e, a)) in other.horizon_abs_error.iter().zip(&other.horizon_abs_actual).enumerate() {
            self.horizon_abs_error[h] += e;
            self.horizon_abs_actual[h] += a;
        }
        self.windows += other.windows;
        self.points += other.points;
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.points == 0 {
            return Err(Error::Empty("evaluation windows"));
        }
        if self.abs_actual <= 0.0 {
            return Err(Error::InvalidArgument("sum of |actuals| is zero".into()));
        }
        let ql: Vec<f64> = self.pinball.iter().map(|p| 2.0 * p / self.abs_actual).collect();
        Ok(EvalReport {
            nd: self.abs_error / self.abs_actual,
            wql: ql.iter().sum::<f64>() / ql.len() as f64,
            ql,
            per_horizon_nd: per_horizon_nd(&self.horizon_abs_error, &self.horizon_abs_actual),
            num_windows: self.windows,
            num_points: self.points,
        })
    }
}

/// ND per horizon step from pooled sums; steps with zero actual mass give NaN.
pub fn per_horizon_nd(abs_error: &[f64], abs_actual: &[f64]) -> Vec<f64> {
    abs_error
        .iter()
        .zip(abs_actual)
        .map(|(e, a)| if *a > 0.0 { e / a } else { f64::NAN })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nd: f64,
    pub wql: f64,
    /// Quantile losses at 0.1, ..., 0.9.
    pub ql: Vec<f64>,
    pub per_horizon_nd: Vec<f64>,
    pub num_windows: usize,
    pub num_points: usize,
}

/// Prediction-range start offsets of every window whose prediction range
/// lies in `span` (a half-open index range of the series), stepping by
/// `stride`.
pub fn rolling_starts(
    series_len: usize,
    span: std::ops::Range<usize>,
    context: usize,
    prediction: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let end = span.end.min(series_len);
    let first = span.start.max(context);
    if end < first + prediction {
        return Err(Error::SeriesTooShort {
            len: end.saturating_sub(span.start),
            context,
            prediction,
        });
    }
    Ok((first..=end - prediction).step_by(stride).map(|p| p - context).collect())
}

/// Rolling evaluation over the last `test_len` points of every series
/// (conditioning may reach back before the test span).
pub fn rolling_evaluate<F: Forecaster + ?Sized>(
    forecaster: &F,
    series: &[TimeSeries],
    test_len: usize,
    context: usize,
    prediction: usize,
    stride: usize,
) -> Result<EvalReport> {
    rolling_evaluate_with(forecaster, series, test_len, context, prediction, stride, |_, w| Ok(w))
}

/// [`rolling_evaluate`] with a hook that decorates each window (for
/// instance with covariates) before forecasting.
pub fn rolling_evaluate_with<F, H>(
    forecaster: &F,
    series: &[TimeSeries],
    test_len: usize,
    context: usize,
    prediction: usize,
    stride: usize,
    mut decorate: H,
) -> Result<EvalReport>
where
    F: Forecaster + ?Sized,
    H: FnMut(&TimeSeries, Window) -> Result<Window>,
{
    let mut acc = Accumulator::default();
    for s in series {
        let span = s.len().saturating_sub(test_len)..s.len();
        for start in rolling_starts(s.len(), span, context, prediction, stride)? {
            let window = decorate(s, s.window(start, context, prediction)?)?;
            let mut input = window.clone();
            input.prediction.clear();
            let tracks = forecaster.quantile_tracks(&input, prediction)?;
            acc.add(&tracks, &window.prediction)?;
        }
    }
    acc.report()
}
