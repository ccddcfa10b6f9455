//! Generation schedules: which sub-series value is produced at each step and
//! which earlier values feed it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{original_index, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// One value per sub-series per sub-series step; conditions on previous
    /// values of later sub-series too.
    Alternating,
    /// Whole sub-series at a time.
    NonAlternating,
}

impl GenerationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Alternating => "alternating",
            GenerationMode::NonAlternating => "non_alternating",
        }
    }
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" | "alt" => Ok(GenerationMode::Alternating),
            "non_alternating" | "non-alternating" | "non" => Ok(GenerationMode::NonAlternating),
            other => Err(Error::InvalidArgument(format!("unknown generation mode '{other}'"))),
        }
    }
}

/// A value reference: element `time` of sub-series `sub`.
pub type ValueRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub step: usize,
    pub sub_series: usize,
    pub time: usize,
    /// Position in the original window.
    pub position: usize,
    /// Autoregressive inputs of this step.
    pub input_refs: Vec<ValueRef>,
}

/// The autoregressive value inputs of sub-series `k` at time `t`, in slot
/// order: own previous value, current values of earlier sub-series, then
/// (alternating only) previous values of later sub-series. `None` marks a
/// reference before the window start.
pub fn autoregressive_refs(
    k: usize,
    t: usize,
    num_subseries: usize,
    mode: GenerationMode,
) -> Vec<Option<ValueRef>> {
    let prev = t.checked_sub(1);
    let mut refs = Vec::with_capacity(num_subseries);
    refs.push(prev.map(|p| (k, p)));
    refs.extend((0..k).map(|j| Some((j, t))));
    if mode == GenerationMode::Alternating {
        refs.extend((k + 1..num_subseries).map(|j| prev.map(|p| (j, p))));
    }
    refs
}

/// Number of autoregressive value slots of sub-model `k`.
pub fn num_value_refs(k: usize, num_subseries: usize, mode: GenerationMode) -> usize {
    match mode {
        GenerationMode::Alternating => num_subseries,
        GenerationMode::NonAlternating => k + 1,
    }
}

/// Schedule over the prediction range: sub-series times
/// `context..context + prediction`.
pub fn build_schedule(
    num_subseries: usize,
    ordering: Ordering,
    mode: GenerationMode,
    context: usize,
    prediction: usize,
) -> Result<Vec<ScheduleEntry>> {
    if num_subseries == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let k_range = 0..num_subseries;
    let t_range = context..context + prediction;
    let pairs: Vec<(usize, usize)> = match mode {
        GenerationMode::Alternating => t_range
            .flat_map(|t| k_range.clone().map(move |k| (k, t)))
            .collect(),
        GenerationMode::NonAlternating => k_range
            .flat_map(|k| t_range.clone().map(move |t| (k, t)))
            .collect(),
    };
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(step, (k, t))| ScheduleEntry {
            step,
            sub_series: k,
            time: t,
            position: original_index(k, t, num_subseries, ordering),
            input_refs: autoregressive_refs(k, t, num_subseries, mode)
                .into_iter()
                .flatten()
                .collect(),
        })
        .collect())
}

/// Window positions in generation order for the hybrid low-to-high
/// frequency scheme: first every position `p` with `p % K == K - 1`, then
/// the rest in time order.
pub fn low2high_order(num_subseries: usize, context: usize, prediction: usize) -> Result<Vec<usize>> {
    if num_subseries == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let range = context..context + prediction;
    let is_low = |p: &usize| p % num_subseries == num_subseries - 1;
    Ok(range
        .clone()
        .filter(is_low)
        .chain(range.filter(|p| !is_low(p)))
        .collect())
}

/// Generation rank per prediction-range position (`rank[p - T]`).
pub fn rank_by_position(order: &[usize], context_positions: usize) -> Vec<usize> {
    let mut rank = vec![usize::MAX; order.len()];
    for (step, &p) in order.iter().enumerate() {
        rank[p - context_positions] = step;
    }
    rank
}
