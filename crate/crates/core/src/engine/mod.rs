//! Sub-series networks: schedules, per-sub-series models, training and
//! forecasting.

pub mod forecast;
pub mod model;
pub mod schedule;
pub mod standard;
pub mod train;

pub use forecast::*;
pub use model::*;
pub use schedule::*;
pub use standard::StandardPipeline;
pub use train::*;
