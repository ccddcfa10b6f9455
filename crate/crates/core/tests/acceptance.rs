//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Numeric arguments select criteria, e.g.
//! `cargo test -p sutranet --test acceptance -- 1 5 9`.

mod common;

use std::panic::AssertUnwindSafe;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use sutranet::baselines::Baseline;
use sutranet::binning::{c2far_sample, softmax, BinningSpec};
use sutranet::config::RunConfig;
use sutranet::engine::{
    backfill_standard_transform, build_schedule, low2high_order, GenerationMode, ModelConfig, NllParts,
    StandardPipeline, SutraNetModel,
};
use sutranet::metrics::{nd, quantile_loss, rolling_evaluate, rolling_starts, wql, Forecaster};
use sutranet::pipeline::fit;
use sutranet::series::{merge_subseries, split_subseries, Ordering, TimeSeries, Window};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect()
}

fn model_config(k: usize, ordering: Ordering, mode: GenerationMode, t: usize, n: usize) -> ModelConfig {
    ModelConfig {
        num_subseries: k,
        ordering,
        mode,
        context_len: t,
        prediction_len: n,
        ..ModelConfig::default()
    }
}

fn c1_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut windows = 0;
    for k in [1, 2, 3, 4, 6, 7, 12] {
        for ordering in [Ordering::Regular, Ordering::Backfill] {
            for _ in 0..1000 {
                let t = k * rng.gen_range(1..=8);
                let n = k * rng.gen_range(0..=8);
                let c = random_values(&mut rng, t);
                let p = random_values(&mut rng, n);
                let w = Window::new(c, p);
                let back = merge_subseries(&split_subseries(&w, k, ordering).map_err(e)?).map_err(e)?;
                let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
                ensure(same(&back.conditioning, &w.conditioning) && same(&back.prediction, &w.prediction), || {
                    format!("K={k} {ordering:?} T={t} N={n}: merge(split(w)) != w")
                })?;
                windows += 1;
            }
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("{windows} windows exact, {took:.2?}"))
}

fn c2_schedules() -> Outcome {
    let cases = [
        (Ordering::Regular, GenerationMode::Alternating, [0, 1, 2, 3, 4, 5, 6, 7, 8]),
        (Ordering::Regular, GenerationMode::NonAlternating, [0, 3, 6, 1, 4, 7, 2, 5, 8]),
        (Ordering::Backfill, GenerationMode::NonAlternating, [2, 5, 8, 1, 4, 7, 0, 3, 6]),
        (Ordering::Backfill, GenerationMode::Alternating, [2, 1, 0, 5, 4, 3, 8, 7, 6]),
    ];
    for (ordering, mode, expected) in cases {
        let got: Vec<usize> = build_schedule(3, ordering, mode, 0, 3)
            .map_err(e)?
            .iter()
            .map(|s| s.position)
            .collect();
        ensure(got == expected, || format!("{ordering:?} {mode:?}: {got:?}"))?;
    }
    let l2h = low2high_order(3, 0, 9).map_err(e)?;
    ensure(l2h == [2, 5, 8, 0, 1, 3, 4, 6, 7], || format!("low-to-high: {l2h:?}"))?;
    Ok("4 sub-series orders and the low-to-high order match".into())
}

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for (k, ordering) in [(1, Ordering::Regular), (3, Ordering::Backfill)] {
        let cfg = ModelConfig {
            hidden: 4,
            layers: 2,
            levels: 2,
            bins: 3,
            inter_layer_dropout: 0.0,
            input_dropout: 0.0,
            ..model_config(k, ordering, GenerationMode::Alternating, 6, 3)
        };
        let m = SutraNetModel::new(cfg, BinningSpec::new(-0.2, 1.2, 2, 3).map_err(e)?, 5).map_err(e)?;
        let w = Window::new(vec![1.0, 3.0, 2.0, 5.0, 4.0, 2.5], vec![3.5, 0.5, 4.5]);
        let mut grads = m.zero_grads();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.accumulate_gradients(&w, 1.0, &mut grads, &mut rng).map_err(e)?;
        let h = 1e-5;
        for s in 0..k {
            for level in 0..2 {
                let blocks = m.nets[s].levels[level].blocks().len();
                for b in 0..blocks {
                    for j in 0..m.nets[s].levels[level].blocks()[b].len() {
                        let mut plus = m.clone();
                        plus.nets[s].levels[level].blocks_mut()[b][j] += h;
                        let mut minus = m.clone();
                        minus.nets[s].levels[level].blocks_mut()[b][j] -= h;
                        let fd = (plus.teacher_forced_nll(&w).map_err(e)? - minus.teacher_forced_nll(&w).map_err(e)?)
                            / (2.0 * h);
                        let an = grads[s].levels[level].blocks()[b][j];
                        let diff = (fd - an).abs();
                        let scale = fd.abs().max(an.abs());
                        ensure(diff <= (1e-4 * scale).max(1e-7), || {
                            format!("K={k} sub-model {s} level {level} block {b} entry {j}: numeric {fd}, analytic {an}")
                        })?;
                        worst_abs = worst_abs.max(diff);
                        if scale > 1e-7 {
                            worst = worst.max(diff / scale);
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "{checked} parameters, worst relative error {worst:.1e}, worst absolute {worst_abs:.1e}, {took:.1?}"
    ))
}

/// Random per-prefix logits for every level: `logits[l][prefix]`, where
/// `prefix` is the coarser path read as a base-B number.
fn random_logit_set(rng: &mut ChaCha8Rng, levels: usize, bins: usize) -> Vec<Vec<Vec<f64>>> {
    (0..levels)
        .map(|l| {
            (0..bins.pow(l as u32))
                .map(|_| (0..bins).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect()
        })
        .collect()
}

fn prefix_index(path: &[usize], bins: usize) -> usize {
    path.iter().fold(0, |acc, &i| acc * bins + i)
}

fn cell_probabilities(spec: &BinningSpec, set: &[Vec<Vec<f64>>]) -> Vec<f64> {
    (0..spec.num_cells())
        .map(|flat| {
            let path = spec.path_of_flat(flat);
            (0..spec.levels)
                .map(|l| softmax(&set[l][prefix_index(&path[..l], spec.bins)])[path[l]])
                .product()
        })
        .collect()
}

fn c4_distribution() -> Outcome {
    let spec = BinningSpec::new(0.0, 1.0, 3, 12).map_err(e)?;
    ensure(spec.num_cells() == 1728, || format!("{} cells", spec.num_cells()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let set = random_logit_set(&mut rng, 3, 12);
        let total: f64 = cell_probabilities(&spec, &set).iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    ensure(worst <= 1e-8, || format!("probability mass off by {worst:e}"))?;

    let set = random_logit_set(&mut rng, 3, 12);
    let probs = cell_probabilities(&spec, &set);
    let draws = 100_000;
    let mut counts = vec![0usize; spec.num_cells()];
    for _ in 0..draws {
        let (v, path) = c2far_sample(|l, coarse| set[l][prefix_index(coarse, 12)].clone(), &spec, &mut rng);
        let (lo, hi) = spec.cell_bounds(&path);
        ensure(lo <= v && v < hi, || format!("sample {v} outside its cell [{lo}, {hi})"))?;
        counts[spec.flat_index(&path)] += 1;
    }
    // cells with expected count below 5 are pooled into one bucket
    let (mut stat, mut df) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (p, &c) in probs.iter().zip(&counts) {
        let expected = p * draws as f64;
        if expected < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += expected;
        } else {
            stat += (c as f64 - expected).powi(2) / expected;
            df += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        df += 1;
    }
    df -= 1;
    let critical = ChiSquared::new(df as f64).map_err(e)?.inverse_cdf(0.99);
    ensure(stat <= critical, || format!("chi-square {stat:.1} > {critical:.1} (df {df})"))?;
    Ok(format!(
        "max |mass - 1| = {worst:.1e} over 100 sets; chi-square {stat:.1} <= {critical:.1} (df {df})"
    ))
}

fn c5_metrics() -> Outcome {
    let hand = nd(&[1.0, 2.0, 2.0], &[1.0, 1.0, 2.0]).map_err(e)?;
    ensure(hand == 0.25, || format!("hand case gives {hand}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ql_gap, mut wql_gap) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(1..50);
        let actual = random_values(&mut rng, n);
        let point = random_values(&mut rng, n);
        let d = nd(&point, &actual).map_err(e)?;
        ql_gap = ql_gap.max((quantile_loss(0.5, &point, &actual).map_err(e)? - d).abs());
        let tracks = vec![point.clone(); 9];
        wql_gap = wql_gap.max((wql(&tracks, &actual).map_err(e)? - d).abs());
    }
    // a point forecaster through the harness interface
    let series = common::seasonal_dataset(3, 400, 5);
    let window = series[0].window(100, 48, 24).map_err(e)?;
    let mut input = window.clone();
    input.prediction.clear();
    let tracks = Baseline::SeasonalNaive { period: 24 }.quantile_tracks(&input, 24).map_err(e)?;
    let d = nd(&tracks[4], &window.prediction).map_err(e)?;
    wql_gap = wql_gap.max((wql(&tracks, &window.prediction).map_err(e)? - d).abs());
    ensure(ql_gap <= 1e-12, || format!("QL_0.5 - ND up to {ql_gap:e}"))?;
    ensure(wql_gap <= 1e-12, || format!("wQL - ND up to {wql_gap:e}"))?;
    Ok(format!("nd hand case 0.25; |QL_0.5 - ND| <= {ql_gap:.1e}; |wQL - ND| <= {wql_gap:.1e}"))
}

fn c6_single_subseries() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let mut m = SutraNetModel::new(
            ModelConfig {
                hidden: 16,
                ..model_config(1, Ordering::Regular, GenerationMode::Alternating, 48, 24)
            },
            BinningSpec::new(-0.1, 1.1, 3, 12).map_err(e)?,
            i / 10,
        )
        .map_err(e)?;
        m.mark_trained();
        let level = rng.gen_range(-50.0..50.0);
        let spread = rng.gen_range(0.1..20.0);
        let c: Vec<f64> = (0..48).map(|_| level + spread * rng.gen::<f64>()).collect();
        let p: Vec<f64> = (0..24).map(|_| level + spread * rng.gen_range(-0.5..1.5)).collect();
        let w = Window::new(c, p);
        let a = m.teacher_forced_nll(&w).map_err(e)?;
        let b = StandardPipeline::new(&m.nets[0].levels, &m.binning)
            .map_err(e)?
            .nll(&w)
            .map_err(e)?;
        ensure(a.to_bits() == b.to_bits(), || format!("window {i}: {a} vs {b}"))?;
    }
    Ok("100 windows bit-identical".into())
}

fn c7_desk_forecasting() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let data = common::seasonal_dataset(50, 2000, 100 + seed);
        let run = RunConfig {
            num_subseries: 6,
            ordering: Ordering::Backfill,
            mode: GenerationMode::Alternating,
            hidden: 32,
            batch_size: 16,
            windows_per_checkpoint: 512,
            max_checkpoints: 10,
            learning_rate: 1e-2,
            val_rollouts: 10,
            val_windows: 16,
            binning_windows: 512,
            eval_stride: 168,
            seed,
            ..RunConfig::default()
        };
        let (system, logs) = fit(&run, &data, |_, _| {}).map_err(e)?;
        ensure(logs[0].records.len() <= 10, || "more than 10 checkpoints".into())?;
        let model = system.evaluate(&data, 50, seed).map_err(e)?;
        let naive = rolling_evaluate(&Baseline::SeasonalNaive { period: 24 }, &data, 168, 168, 168, 168).map_err(e)?;
        ensure(model.num_windows == naive.num_windows, || "evaluation windows differ".into())?;
        ensure(model.nd < naive.nd, || {
            format!("seed {seed}: model ND {:.4} >= seasonal naive ND {:.4}", model.nd, naive.nd)
        })?;
        lines.push(format!("seed {seed} {:.4} < {:.4}", model.nd, naive.nd));
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(15 * 60), || format!("took {took:?}"))?;
    Ok(format!("ND model < seasonal naive: {}; {took:.0?}", lines.join(", ")))
}

/// Mean continuous teacher-forced NLL per point over the held-out tail.
fn test_nll(model: &SutraNetModel, data: &[TimeSeries], test_len: usize, t: usize, n: usize) -> Result<f64, String> {
    let mut parts = NllParts::default();
    for s in data {
        for start in rolling_starts(s.len(), s.len() - test_len..s.len(), t, n, 24).map_err(e)? {
            parts.add(model.teacher_forced_parts(&s.window(start, t, n).map_err(e)?).map_err(e)?);
        }
    }
    Ok(parts.continuous() / parts.points as f64)
}

fn c8_signal_path() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let data = common::lag24_dataset(20, 1000, 0.1, 200 + seed);
        let mut nll = Vec::new();
        for (k, ordering) in [(1, Ordering::Regular), (6, Ordering::Backfill)] {
            // identical budget: same windows, batches and checkpoints
            let run = RunConfig {
                num_subseries: k,
                ordering,
                mode: GenerationMode::Alternating,
                hidden: 32,
                context_len: 96,
                prediction_len: 96,
                batch_size: 16,
                windows_per_checkpoint: 256,
                max_checkpoints: 8,
                learning_rate: 1e-2,
                val_rollouts: 10,
                val_windows: 8,
                val_len: 96,
                test_len: 192,
                binning_windows: 512,
                seed,
                ..RunConfig::default()
            };
            let (system, _) = fit(&run, &data, |_, _| {}).map_err(e)?;
            nll.push(test_nll(&system.models[0], &data, 192, 96, 96)?);
        }
        ensure(nll[1] <= nll[0], || {
            format!("seed {seed}: sub-series NLL {:.4} > standard NLL {:.4}", nll[1], nll[0])
        })?;
        lines.push(format!("seed {seed} {:.3} <= {:.3}", nll[1], nll[0]));
    }
    Ok(format!("test NLL per point, K=6 vs K=1: {}", lines.join(", ")))
}

fn median_time(mut f: impl FnMut(), reps: usize) -> Duration {
    f();
    let mut times: Vec<Duration> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    times.sort();
    times[reps / 2]
}

/// Mean time of one step of the largest sub-model (every value slot
/// filled) through all of its level networks, weights warm.
fn network_step_time(k: usize, hidden: usize) -> Result<f64, String> {
    let cfg = ModelConfig {
        hidden,
        ..model_config(k, Ordering::Backfill, GenerationMode::Alternating, 12 * k, 12 * k)
    };
    let m = SutraNetModel::new(cfg.clone(), BinningSpec::new(-0.1, 1.1, 3, 12).map_err(e)?, 0).map_err(e)?;
    let sub = k - 1;
    let width = cfg.base_width(sub);
    let slots = cfg.num_value_slots(sub);
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    let inputs: Vec<Vec<Vec<(usize, f64)>>> = (0..64)
        .map(|_| {
            let base: Vec<(usize, f64)> = (0..slots)
                .flat_map(|s| (0..3).map(move |l| (s, l)))
                .map(|(s, l)| (s * 36 + l * 12 + rng.gen_range(0..12), 1.0))
                .collect();
            (0..3)
                .map(|l| {
                    let mut x = base.clone();
                    if l > 0 {
                        x.extend([(width, 0.25), (width + 1, 0.5)]);
                    }
                    x
                })
                .collect()
        })
        .collect();
    let stacks = &m.nets[sub].levels;
    for (l, stack) in stacks.iter().enumerate() {
        let want = width + if l > 0 { 2 } else { 0 };
        ensure(stack.input_width() == want, || format!("level {l} input width {}", stack.input_width()))?;
    }
    let mut states: Vec<_> = stacks.iter().map(|s| s.zero_states()).collect();
    let mut logits = Vec::new();
    let mut scratch = Default::default();
    let steps = 4000;
    let mut run = |n: usize| {
        for i in 0..n {
            for (l, stack) in stacks.iter().enumerate() {
                stack.step(&mut states[l], &inputs[i % 64][l], &mut logits, &mut scratch);
            }
        }
    };
    run(200);
    let mut best = f64::MAX;
    for _ in 0..5 {
        let t = Instant::now();
        run(steps);
        best = best.min(t.elapsed().as_secs_f64() / steps as f64);
    }
    Ok(best)
}

/// Whole-window times per position: teacher-forced and greedy generation.
fn window_step_times(k: usize, w: &Window) -> Result<(f64, f64), String> {
    let positions = w.len() as f64;
    let cfg = ModelConfig {
        hidden: 64,
        ..model_config(k, Ordering::Backfill, GenerationMode::Alternating, w.context_len(), w.prediction_len())
    };
    let mut m = SutraNetModel::new(cfg, BinningSpec::new(-0.1, 1.1, 3, 12).map_err(e)?, 0).map_err(e)?;
    m.mark_trained();
    let mut input = w.clone();
    input.prediction.clear();
    let tf = median_time(|| assert!(m.teacher_forced_nll(w).unwrap().is_finite()), 7);
    let gen = median_time(|| assert!(!m.greedy_forecast(&input).unwrap().is_empty()), 7);
    Ok((tf.as_secs_f64() / positions, gen.as_secs_f64() / positions))
}

fn c9_complexity() -> Outcome {
    let step2 = network_step_time(2, 64)?;
    let step12 = network_step_time(12, 64)?;
    let ratio = step12 / step2;
    ensure(ratio < 2.0, || {
        format!("per-step forward K=12 / K=2 = {ratio:.2} ({:.1} vs {:.1} us)", step12 * 1e6, step2 * 1e6)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = common::random_window(&mut rng, 168, 168);
    let (tf2, gen2) = window_step_times(2, &w)?;
    let (tf12, gen12) = window_step_times(12, &w)?;

    let standard = ModelConfig {
        hidden: 64,
        ..ModelConfig::default()
    };
    let k6 = ModelConfig {
        num_subseries: 6,
        ..standard.clone()
    };
    let spec = BinningSpec::new(0.0, 1.0, 3, 12).map_err(e)?;
    let counts = [
        (standard.count_params(), SutraNetModel::new(standard, spec, 0).map_err(e)?.num_params()),
        (k6.count_params(), SutraNetModel::new(k6, spec, 0).map_err(e)?.num_params()),
    ];
    ensure(counts[0] == (81_830, 81_830), || format!("standard model has {:?} parameters", counts[0]))?;
    ensure(counts[1] == (1_320_420, 1_320_420), || format!("K=6 model has {:?} parameters", counts[1]))?;
    Ok(format!(
        "per-step forward K=12/K=2 {ratio:.2}x ({:.1} vs {:.1} us); whole window per position: \
         teacher-forced {:.2}x, generation {:.2}x (not gated); parameters 81830 and 1320420",
        step12 * 1e6,
        step2 * 1e6,
        tf12 / tf2,
        gen12 / gen2
    ))
}

fn c10_backfill_standard() -> Outcome {
    let example = Window::new(vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]);
    let got = backfill_standard_transform(&example, 3).map_err(e)?.values();
    ensure(got == [2.0, 1.0, 0.0, 5.0, 4.0, 3.0], || format!("K=3 example gives {got:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..500 {
        let k = rng.gen_range(1..=12);
        let t = k * rng.gen_range(1..=6);
        let n = k * rng.gen_range(0..=6);
        let w = Window::new(random_values(&mut rng, t), random_values(&mut rng, n));
        let once = backfill_standard_transform(&w, k).map_err(e)?;
        let twice = backfill_standard_transform(&once, k).map_err(e)?;
        ensure(twice == w, || format!("K={k}: not an involution"))?;
        ensure(k > 1 || once == w, || "K=1 is not the identity".into())?;
    }
    ensure(backfill_standard_transform(&Window::new(vec![1.0; 4], vec![]), 3).is_err(), || {
        "non-divisible length accepted".into()
    })?;

    // end to end on the forecasting set: a standard model on reversed blocks
    let data = common::seasonal_dataset(50, 2000, 100);
    let run = RunConfig {
        num_subseries: 1,
        block_reverse: 6,
        hidden: 16,
        batch_size: 16,
        windows_per_checkpoint: 64,
        max_checkpoints: 1,
        val_rollouts: 5,
        val_windows: 8,
        binning_windows: 256,
        eval_stride: 168,
        ..RunConfig::default()
    };
    let (system, _) = fit(&run, &data, |_, _| {}).map_err(e)?;
    let report = system.evaluate(&data, 5, 0).map_err(e)?;
    let window = system.input_window(&data[0], data[0].len()).map_err(e)?;
    let forecast = system.forecast(&window, 5, 0).map_err(e)?;
    ensure(report.nd.is_finite() && forecast.horizon() == 168, || "end-to-end run broken".into())?;
    Ok(format!(
        "example exact, 500 involutions, end-to-end ND {:.3} over {} windows",
        report.nd, report.num_windows
    ))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "split/merge round trip", c1_round_trip),
        (2, "generation order golden cases", c2_schedules),
        (3, "gradient check", c3_gradient_check),
        (4, "distribution normalization and sampling", c4_distribution),
        (5, "metric identities", c5_metrics),
        (6, "K=1 equals the standard pipeline", c6_single_subseries),
        (7, "desk-scale forecasting quality", c7_desk_forecasting),
        (8, "signal-path diagnostic", c8_signal_path),
        (9, "complexity contract", c9_complexity),
        (10, "backfill-standard transform", c10_backfill_standard),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{took:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{took:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
