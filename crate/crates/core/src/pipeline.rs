//! End-to-end binding of configuration, data, training and evaluation.

use crate::config::{RunConfig, System};
use crate::dataset::{DataSplit, SplitSpec, WindowSource};
use crate::engine::{
    fit_dataset_binning, low2highfreq_forecast, train_with_progress, CheckpointRecord, ForecastDistribution,
    Low2HighForecaster, ModelForecaster, SutraNetModel, TrainLog,
};
use crate::error::{Error, Result};
use crate::metrics::{rolling_evaluate_with, EvalReport, Forecaster};
use crate::series::{TimeSeries, Window};

/// Trained models of one run, plus what is needed to rebuild their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSystem {
    pub run: RunConfig,
    /// Total covariate width seen by the models (series plus seasonal).
    pub covariate_dims: usize,
    /// Leading covariates in target units.
    pub scaled_covariate_dims: usize,
    pub models: Vec<SutraNetModel>,
}

pub fn window_source<'a>(run: &RunConfig, series: &'a [TimeSeries]) -> Result<WindowSource<'a>> {
    WindowSource::new(series, run.context_len, run.prediction_len, run.seasonal_covariates)
}

pub fn split_dataset(run: &RunConfig, series: &[TimeSeries]) -> Result<DataSplit> {
    SplitSpec {
        val_len: run.val_len,
        test_len: run.test_len,
    }
    .split(series, run.context_len, run.prediction_len, run.val_windows, run.val_seed)
}

/// Fits binning and trains every model of the run. `progress` receives the
/// model index and each checkpoint record.
pub fn fit<P: FnMut(usize, &CheckpointRecord)>(
    run: &RunConfig,
    series: &[TimeSeries],
    mut progress: P,
) -> Result<(TrainedSystem, Vec<TrainLog>)> {
    let source = window_source(run, series)?;
    let split = split_dataset(run, series)?;
    let covariate_dims = source.covariate_dims();
    let scaled_covariate_dims = source.series_covariate_dims();
    let train_cfg = run.train_config();
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for (i, cfg) in run.model_configs(covariate_dims, scaled_covariate_dims)?.into_iter().enumerate() {
        let binning = fit_dataset_binning(&cfg, &source, &split.train, run.binning_windows)?;
        let mut model = SutraNetModel::new(cfg, binning, run.seed.wrapping_add(i as u64))?;
        let log = train_with_progress(&mut model, &source, &split.train, &split.val, &train_cfg, |r| progress(i, r))?;
        models.push(model);
        logs.push(log);
    }
    Ok((
        TrainedSystem {
            run: run.clone(),
            covariate_dims,
            scaled_covariate_dims,
            models,
        },
        logs,
    ))
}

impl TrainedSystem {
    pub fn forecaster(&self, rollouts: usize, seed: u64) -> Result<Box<dyn Forecaster + '_>> {
        match (self.run.system, self.models.as_slice()) {
            (System::SutraNet, [model]) => Ok(Box::new(ModelForecaster { model, rollouts, seed })),
            (System::Low2High, [low, high]) => Ok(Box::new(Low2HighForecaster { low, high, rollouts, seed })),
            _ => Err(Error::Format(format!(
                "{} models for system '{}'",
                self.models.len(),
                self.run.system.as_str()
            ))),
        }
    }

    pub fn forecast(&self, window: &Window, rollouts: usize, seed: u64) -> Result<ForecastDistribution> {
        match (self.run.system, self.models.as_slice()) {
            (System::SutraNet, [model]) => model.forecast(window, rollouts, seed),
            (System::Low2High, [low, high]) => low2highfreq_forecast(low, high, window, rollouts, seed),
            _ => Err(Error::Format(format!("{} models for system '{}'", self.models.len(), self.run.system.as_str()))),
        }
    }

    /// Window of `series` whose prediction range starts at `origin`, with
    /// covariates attached. The prediction range may run past the end of
    /// the series, in which case it is returned empty.
    pub fn input_window(&self, series: &TimeSeries, origin: usize) -> Result<Window> {
        let (t, n) = (self.run.context_len, self.run.prediction_len);
        if origin < t || origin > series.len() {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                context: t,
                prediction: 0,
            });
        }
        let start = origin - t;
        let known = (series.len() - origin).min(n);
        let mut window = series.window(start, t, known)?;
        if known < n {
            if self.scaled_covariate_dims > 0 {
                return Err(Error::InvalidArgument(
                    "forecasting past the end needs covariates for the prediction range".into(),
                ));
            }
            // placeholders so the seasonal features span the prediction range
            window.prediction.resize(n, f64::NAN);
        }
        let mut window = window_source(&self.run, std::slice::from_ref(series))?.decorate(series, window)?;
        if known < n {
            window.prediction.clear();
        }
        Ok(window)
    }

    /// Rolling evaluation over the last `test_len` points of every series.
    pub fn evaluate(&self, series: &[TimeSeries], rollouts: usize, seed: u64) -> Result<EvalReport> {
        let source = window_source(&self.run, series)?;
        let forecaster = self.forecaster(rollouts, seed)?;
        rolling_evaluate_with(
            forecaster.as_ref(),
            series,
            self.run.test_len,
            self.run.context_len,
            self.run.prediction_len,
            self.run.eval_stride,
            |s, w| source.decorate(s, w),
        )
    }
}
