#![allow(dead_code)]

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sutranet::series::{Freq, TimeSeries, Window};

pub fn hourly(id: &str, values: Vec<f64>) -> TimeSeries {
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap();
    TimeSeries::new(id, start, Freq::parse("1H").unwrap(), values, None).unwrap()
}

/// Daily-seasonal hourly series: per-series level and amplitude, a level
/// shift at a random point, and Gaussian noise.
pub fn seasonal_dataset(count: usize, len: usize, seed: u64) -> Vec<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..count)
        .map(|i| {
            let level = rng.gen_range(20.0..80.0);
            let amp = rng.gen_range(5.0..20.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let shift_at = rng.gen_range(len / 4..len * 3 / 4);
            let shift = rng.gen_range(-10.0..10.0);
            let sd = 0.1 * amp;
            let values = (0..len)
                .map(|t| {
                    let season = (std::f64::consts::TAU * t as f64 / 24.0 + phase).sin();
                    let base = if t >= shift_at { level + shift } else { level };
                    base + amp * season + sd * noise.sample(&mut rng)
                })
                .collect();
            hourly(&format!("s{i}"), values)
        })
        .collect()
}

/// `y_t = y_{t-24} + noise`, seeded with a random first day.
pub fn lag24_dataset(count: usize, len: usize, noise_sd: f64, seed: u64) -> Vec<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    (0..count)
        .map(|i| {
            let mut v: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..10.0)).collect();
            for t in 24..len {
                let next = v[t - 24] + noise.sample(&mut rng);
                v.push(next);
            }
            hourly(&format!("l{i}"), v)
        })
        .collect()
}

pub fn random_window(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Window {
    let level = rng.gen_range(-5.0..5.0);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| level + rng.gen_range(-3.0..3.0)).collect() };
    let c = draw(t);
    let p = draw(n);
    Window::new(c, p)
}
