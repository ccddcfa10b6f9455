//! Sub-series autoregressive networks for probabilistic forecasting of long
//! univariate sequences.

pub mod artifact;
pub mod baselines;
pub mod binning;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod seqnet;
pub mod series;
pub mod tune;

pub use error::{Error, Result};
