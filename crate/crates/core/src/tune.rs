//! Grid search over initial learning rate and weight decay.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::TrainLog;
use crate::error::{Error, Result};
use crate::pipeline::{fit, TrainedSystem};
use crate::series::TimeSeries;

pub const LEARNING_RATES: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const WEIGHT_DECAYS: [f64; 4] = [1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Best validation ND over all trained models (summed for a pair).
    pub val_nd: f64,
    pub checkpoints: usize,
    /// Error message when the trial diverged or failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub trials: Vec<Trial>,
    pub best: usize,
    pub best_config: RunConfig,
    pub best_system: TrainedSystem,
    pub best_logs: Vec<TrainLog>,
}

impl TuneOutcome {
    /// Tab-separated trial table with a header row.
    pub fn table(&self) -> String {
        let mut s = String::from("learning_rate\tweight_decay\tval_nd\tcheckpoints\tselected\n");
        for (i, t) in self.trials.iter().enumerate() {
            s.push_str(&format!(
                "{:e}\t{:e}\t{}\t{}\t{}\n",
                t.learning_rate,
                t.weight_decay,
                t.error.as_ref().map_or(format!("{:.6}", t.val_nd), |e| format!("failed: {e}")),
                t.checkpoints,
                if i == self.best { "*" } else { "" }
            ));
        }
        s
    }
}

/// Whether `a` should be preferred over `b`.
fn precedes(a: &Trial, b: &Trial) -> bool {
    (a.val_nd, a.learning_rate, a.weight_decay) < (b.val_nd, b.learning_rate, b.weight_decay)
}

/// Index of the selected trial among the successful ones.
pub fn select_best(trials: &[Trial]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate().filter(|(_, t)| t.error.is_none()) {
        if best.is_none_or(|b| precedes(t, &trials[b])) {
            best = Some(i);
        }
    }
    best
}

fn score(logs: &[TrainLog]) -> Result<f64> {
    logs.iter()
        .map(|l| l.best_val_nd.ok_or(Error::Empty("validation windows")))
        .sum()
}

/// Trains one run per grid cell and keeps the lowest validation ND. Ties
/// go to the lower learning rate, then the lower weight decay. Cells that
/// fail (for instance by diverging) are recorded and skipped.
pub fn tune(base: &RunConfig, series: &[TimeSeries], learning_rates: &[f64], weight_decays: &[f64]) -> Result<TuneOutcome> {
    if learning_rates.is_empty() || weight_decays.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    let mut trials = Vec::new();
    let mut best: Option<(usize, TrainedSystem, Vec<TrainLog>)> = None;
    for &lr in learning_rates {
        for &wd in weight_decays {
            let run = RunConfig {
                learning_rate: lr,
                weight_decay: wd,
                ..base.clone()
            };
            let outcome = fit(&run, series, |_, _| {}).and_then(|(sys, logs)| Ok((score(&logs)?, sys, logs)));
            match outcome {
                Ok((nd, sys, logs)) => {
                    trials.push(Trial {
                        learning_rate: lr,
                        weight_decay: wd,
                        val_nd: nd,
                        checkpoints: logs.iter().map(|l| l.records.len()).sum(),
                        error: None,
                    });
                    let i = trials.len() - 1;
                    let better = match &best {
                        None => true,
                        Some((b, _, _)) => precedes(&trials[i], &trials[*b]),
                    };
                    if better {
                        best = Some((i, sys, logs));
                    }
                }
                Err(Error::Empty(what)) => return Err(Error::Empty(what)),
                Err(e) => trials.push(Trial {
                    learning_rate: lr,
                    weight_decay: wd,
                    val_nd: f64::NAN,
                    checkpoints: 0,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    let (best, best_system, best_logs) = best.ok_or_else(|| Error::InvalidArgument("every tuning trial failed".into()))?;
    Ok(TuneOutcome {
        best_config: best_system.run.clone(),
        trials,
        best,
        best_system,
        best_logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(lr: f64, wd: f64, nd: f64) -> Trial {
        Trial {
            learning_rate: lr,
            weight_decay: wd,
            val_nd: nd,
            checkpoints: 1,
            error: None,
        }
    }

    #[test]
    fn ties_prefer_lower_learning_rate_then_lower_decay() {
        let trials = vec![
            trial(1e-1, 1e-7, 0.2),
            trial(1e-3, 1e-4, 0.2),
            trial(1e-3, 1e-6, 0.2),
            trial(1e-2, 1e-7, 0.3),
        ];
        assert_eq!(select_best(&trials), Some(2));
    }

    #[test]
    fn lowest_nd_wins_and_failures_are_skipped() {
        let mut failed = trial(1e-4, 1e-7, f64::NAN);
        failed.error = Some("diverged".into());
        let trials = vec![failed, trial(1e-1, 1e-4, 0.5), trial(1e-2, 1e-4, 0.4)];
        assert_eq!(select_best(&trials), Some(2));
        assert_eq!(select_best(&trials[..1]), None);
    }
}
