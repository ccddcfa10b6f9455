//! JSON-lines datasets, train/validation/test spans and window sources.

use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rolling_starts;
use crate::series::{build_seasonal_covariates, Freq, TimeSeries, Window};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    start: String,
    freq: String,
    target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariates: Option<Vec<Vec<f64>>>,
}

/// Accepts `YYYY-MM-DDTHH:MM:SS[.f]`, a space separator, RFC 3339 with an
/// offset (converted to UTC), or a bare date.
pub fn parse_timestamp(text: &str) -> Result<NaiveDateTime> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| Error::Format(format!("unrecognized timestamp '{text}'")))
}

fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

/// Parses one series per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<TimeSeries>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        let at_line = |e: Error| Error::Format(format!("line {n}: {e}"));
        let start = parse_timestamp(&rec.start).map_err(at_line)?;
        let freq = Freq::parse(&rec.freq).map_err(at_line)?;
        let series = TimeSeries::new(rec.id, start, freq, rec.target, rec.covariates).map_err(at_line)?;
        out.push(series);
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

/// Serializes series in the ingest format. Values keep full precision.
pub fn to_jsonl(series: &[TimeSeries]) -> Result<String> {
    let mut out = String::new();
    for s in series {
        let rec = Record {
            id: s.id.clone(),
            start: format_timestamp(&s.start),
            freq: s.freq.to_string_repr(),
            target: s.values.clone(),
            covariates: s.covariates.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, series: &[TimeSeries]) -> Result<()> {
    std::fs::write(path, to_jsonl(series)?)?;
    Ok(())
}

/// A window of `series[series]` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub series: usize,
    pub start: usize,
}

/// Builds windows of fixed geometry from a dataset, attaching covariates.
#[derive(Debug, Clone)]
pub struct WindowSource<'a> {
    pub series: &'a [TimeSeries],
    pub context: usize,
    pub prediction: usize,
    pub seasonal: bool,
}

impl<'a> WindowSource<'a> {
    pub fn new(series: &'a [TimeSeries], context: usize, prediction: usize, seasonal: bool) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let widths: Vec<usize> = series
            .iter()
            .map(|s| s.covariates.as_ref().map_or(0, |c| c[0].len()))
            .collect();
        if widths.iter().any(|&w| w != widths[0]) {
            return Err(Error::Shape("series carry different covariate widths".into()));
        }
        Ok(Self {
            series,
            context,
            prediction,
            seasonal,
        })
    }

    /// Covariates in target units (first) plus seasonal positions.
    pub fn covariate_dims(&self) -> usize {
        self.series_covariate_dims() + if self.seasonal { 2 } else { 0 }
    }

    pub fn series_covariate_dims(&self) -> usize {
        self.series[0].covariates.as_ref().map_or(0, |c| c[0].len())
    }

    /// Adds seasonal covariates to a window cut from `series`.
    pub fn decorate(&self, series: &TimeSeries, mut window: Window) -> Result<Window> {
        if self.seasonal {
            let seasonal = build_seasonal_covariates(series, &window);
            window.covariates = Some(match window.covariates.take() {
                Some(own) => own
                    .into_iter()
                    .zip(seasonal)
                    .map(|(mut a, b)| {
                        a.extend(b);
                        a
                    })
                    .collect(),
                None => seasonal,
            });
        }
        Ok(window)
    }

    pub fn window(&self, r: WindowRef) -> Result<Window> {
        let s = self
            .series
            .get(r.series)
            .ok_or_else(|| Error::InvalidArgument(format!("no series {}", r.series)))?;
        self.decorate(s, s.window(r.start, self.context, self.prediction)?)
    }
}

/// Per-series spans: the last `test_len` points are for testing, the
/// `val_len` before them for validation, the rest for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub val_len: usize,
    pub test_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Vec<WindowRef>,
    pub val: Vec<WindowRef>,
}

impl SplitSpec {
    /// Training windows lie fully inside the training span; validation
    /// windows have non-overlapping prediction ranges inside the
    /// validation span. At most `max_val` validation windows are kept,
    /// chosen with `seed`.
    pub fn split(
        &self,
        series: &[TimeSeries],
        context: usize,
        prediction: usize,
        max_val: usize,
        seed: u64,
    ) -> Result<DataSplit> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        let total = context + prediction;
        for (i, s) in series.iter().enumerate() {
            let train_end = s.len().saturating_sub(self.val_len + self.test_len);
            if train_end >= total {
                train.extend((0..=train_end - total).map(|start| WindowRef { series: i, start }));
            }
            if self.val_len >= prediction {
                let span = train_end..train_end + self.val_len;
                if let Ok(starts) = rolling_starts(s.len(), span, context, prediction, prediction) {
                    val.extend(starts.into_iter().map(|start| WindowRef { series: i, start }));
                }
            }
        }
        if train.is_empty() {
            return Err(Error::SeriesTooShort {
                len: series.iter().map(TimeSeries::len).max().unwrap_or(0),
                context,
                prediction,
            });
        }
        if val.len() > max_val {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            val.shuffle(&mut rng);
            val.truncate(max_val);
            val.sort_by_key(|r| (r.series, r.start));
        }
        Ok(DataSplit { train, val })
    }
}
