//! Untrained reference forecasters.

use crate::error::{Error, Result};
use crate::metrics::{Forecaster, QUANTILE_LEVELS};
use crate::series::Window;

/// Repeats the last conditioning value.
pub fn naive_forecast(window: &Window, prediction_len: usize) -> Result<Vec<f64>> {
    let last = *window
        .conditioning
        .last()
        .ok_or(Error::Empty("conditioning range"))?;
    Ok(vec![last; prediction_len])
}

/// Horizon `h` repeats the most recent conditioning value with the same
/// phase modulo `period`; horizons past one period recycle the same phases.
pub fn seasonal_naive_forecast(window: &Window, prediction_len: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
    }
    let t = window.conditioning.len();
    if t < period {
        return Err(Error::InvalidArgument(format!(
            "conditioning length {t} shorter than seasonal period {period}"
        )));
    }
    Ok((0..prediction_len)
        .map(|h| window.conditioning[t - period + h % period])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Naive,
    SeasonalNaive { period: usize },
}

impl Baseline {
    pub fn forecast(&self, window: &Window, prediction_len: usize) -> Result<Vec<f64>> {
        match *self {
            Baseline::Naive => naive_forecast(window, prediction_len),
            Baseline::SeasonalNaive { period } => seasonal_naive_forecast(window, prediction_len, period),
        }
    }
}

impl Forecaster for Baseline {
    /// A point forecast: every quantile track equals the point.
    fn quantile_tracks(&self, window: &Window, prediction_len: usize) -> Result<Vec<Vec<f64>>> {
        let point = self.forecast(window, prediction_len)?;
        Ok(vec![point; QUANTILE_LEVELS.len()])
    }
}
