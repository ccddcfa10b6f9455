//! Browser bindings for three inspection views. Every export returns a JSON
//! string, or an error message.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sutranet::binning::{c2far_sample, softmax, BinningSpec};
use sutranet::engine::{build_schedule, low2high_order, GenerationMode};
use sutranet::series::{original_index, split_subseries, Ordering, Window};
use wasm_bindgen::prelude::*;

const MAX_CELLS: usize = 20_000;

fn ordering(backfill: bool) -> Ordering {
    if backfill {
        Ordering::Backfill
    } else {
        Ordering::Regular
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: '{t}'")))
        .collect()
}

/// Splits comma-separated values into `k` sub-series. The first `context`
/// values are the conditioning range.
#[wasm_bindgen]
pub fn split_preview(values: &str, k: usize, backfill: bool, context: usize) -> Result<String, String> {
    let all = parse_values(values)?;
    let t = context.min(all.len());
    let window = Window::new(all[..t].to_vec(), all[t..].to_vec());
    let ord = ordering(backfill);
    let bundle = split_subseries(&window, k, ord).map_err(|e| e.to_string())?;
    let positions: Vec<Vec<usize>> = (0..k)
        .map(|s| (0..bundle.subs[s].len()).map(|j| original_index(s, j, k, ord)).collect())
        .collect();
    Ok(json!({
        "subs": bundle.subs,
        "positions": positions,
        "context_len": bundle.context_len,
    })
    .to_string())
}

/// Generation order over `steps` sub-series steps. `mode` is
/// `alternating`, `non_alternating` or `low2high`; the last ignores
/// `backfill` and covers `k * steps` positions.
#[wasm_bindgen]
pub fn generation_order(k: usize, steps: usize, backfill: bool, mode: &str) -> Result<String, String> {
    if k == 0 || steps == 0 || k * steps > 4096 {
        return Err("need 1 <= K, 1 <= steps and K * steps <= 4096".into());
    }
    let rows: Vec<Value> = if mode == "low2high" {
        low2high_order(k, 0, k * steps)
            .map_err(|e| e.to_string())?
            .into_iter()
            .enumerate()
            .map(|(step, p)| json!({ "step": step, "position": p, "low": p % k == k - 1 }))
            .collect()
    } else {
        let mode: GenerationMode = mode.parse().map_err(|e: sutranet::Error| e.to_string())?;
        build_schedule(k, ordering(backfill), mode, 0, steps)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|e| {
                json!({
                    "step": e.step,
                    "sub_series": e.sub_series,
                    "time": e.time,
                    "position": e.position,
                    "inputs": e.input_refs,
                })
            })
            .collect()
    };
    Ok(Value::Array(rows).to_string())
}

/// Level logits that favour bins near `center`, each level conditioned on
/// the coarser cell.
fn peaked_logits(spec: &BinningSpec, path: &[usize], center: f64, spread: f64) -> Vec<f64> {
    let (lo, hi) = spec.cell_bounds(path);
    let w = (hi - lo) / spec.bins as f64;
    (0..spec.bins)
        .map(|i| {
            let mid = lo + (i as f64 + 0.5) * w;
            -(mid - center).powi(2) / (2.0 * spread * spread)
        })
        .collect()
}

/// Enumerates every finest cell of an `L`-level, `B`-bin distribution on
/// [0, 1) with peaked level logits, and histograms `draws` samples.
#[wasm_bindgen]
pub fn c2f_explore(levels: usize, bins: usize, center: f64, spread: f64, draws: usize, seed: u64) -> Result<String, String> {
    let spec = BinningSpec::new(0.0, 1.0, levels, bins).map_err(|e| e.to_string())?;
    if spec.num_cells() > MAX_CELLS || levels > 8 {
        return Err(format!("{} cells is too many to enumerate", spec.num_cells()));
    }
    if !(spread > 0.0 && spread.is_finite() && center.is_finite()) {
        return Err("spread must be positive".into());
    }
    let mut cells = Vec::with_capacity(spec.num_cells());
    let mut total = 0.0;
    for flat in 0..spec.num_cells() {
        let path = spec.path_of_flat(flat);
        let mut p = 1.0;
        for l in 0..levels {
            p *= softmax(&peaked_logits(&spec, &path[..l], center, spread))[path[l]];
        }
        total += p;
        let (lo, hi) = spec.cell_bounds(&path);
        cells.push(json!([lo, hi, p]));
    }
    let mut counts = vec![0usize; spec.num_cells()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws.min(1_000_000) {
        let (_, path) = c2far_sample(|_, coarse| peaked_logits(&spec, coarse, center, spread), &spec, &mut rng);
        counts[spec.flat_index(&path)] += 1;
    }
    Ok(json!({ "cells": cells, "total": total, "counts": counts }).to_string())
}
