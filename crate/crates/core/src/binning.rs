//! Coarse-to-fine hierarchical binned output distribution, plus the flat
//! single-level variant.
//!
//! Values are discretized on `[low, high)` into `B^L` finest cells. A cell is
//! addressed by `L` indices, one per level, each in `0..B`; level `l` selects
//! one of `B` equal sub-intervals of the cell chosen at level `l - 1`.
//! Values outside the extent are clamped onto the edge cells
//! `(0, .., 0)` and `(B-1, .., B-1)` and carry a below/above flag.
//!
//! Input feature layout: each encoded value occupies one block of `L * B`
//! dims; dim `l * B + i` is one iff the value's level-`l` index is `i`.
//! A missing value leaves its block all zero, which is unambiguous since an
//! encoded value always has exactly `L` ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 3;
pub const DEFAULT_BINS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub low: f64,
    pub high: f64,
    pub levels: usize,
    pub bins: usize,
}

impl BinningSpec {
    pub fn new(low: f64, high: f64, levels: usize, bins: usize) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(Error::InvalidArgument(format!(
                "binning extent requires low < high, got [{low}, {high}]"
            )));
        }
        if levels == 0 || bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "need levels >= 1 and bins >= 2, got L={levels}, B={bins}"
            )));
        }
        Ok(Self {
            low,
            high,
            levels,
            bins,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.bins.pow(self.levels as u32)
    }

    pub fn finest_width(&self) -> f64 {
        (self.high - self.low) / self.num_cells() as f64
    }

    /// Width of one `L * B` input block.
    pub fn block_width(&self) -> usize {
        self.levels * self.bins
    }

    /// Bounds of the cell addressed by a (possibly partial) index path.
    pub fn cell_bounds(&self, path: &[usize]) -> (f64, f64) {
        let mut lo = self.low;
        let mut width = self.high - self.low;
        for &i in path {
            width /= self.bins as f64;
            lo += i as f64 * width;
        }
        (lo, lo + width)
    }

    /// Row-major flat cell index of a full path.
    pub fn flat_index(&self, path: &[usize]) -> usize {
        path.iter().fold(0, |acc, &i| acc * self.bins + i)
    }

    pub fn path_of_flat(&self, mut flat: usize) -> Vec<usize> {
        let mut path = vec![0; self.levels];
        for slot in path.iter_mut().rev() {
            *slot = flat % self.bins;
            flat /= self.bins;
        }
        path
    }
}

/// Per-level bin indices of one value. For out-of-extent values the indices
/// hold the clamped edge cell and exactly one flag is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct C2FEncoding {
    pub indices: Vec<usize>,
    pub below: bool,
    pub above: bool,
}

impl C2FEncoding {
    pub fn in_extent(&self) -> bool {
        !self.below && !self.above
    }
}

pub fn c2f_encode(value: f64, spec: &BinningSpec) -> C2FEncoding {
    let cells = spec.num_cells();
    let u = (value - spec.low) / (spec.high - spec.low);
    let (flat, below, above) = if u < 0.0 || value < spec.low {
        (0, true, false)
    } else if u >= 1.0 || value >= spec.high {
        (cells - 1, false, true)
    } else {
        (((u * cells as f64).floor() as usize).min(cells - 1), false, false)
    };
    C2FEncoding {
        indices: spec.path_of_flat(flat),
        below,
        above,
    }
}

/// Unnormalized per-level scores; level `l` holds `B` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct C2FLogits {
    pub levels: Vec<Vec<f64>>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `target` under softmax(`logits`); also returns the
/// gradient w.r.t. the logits (`softmax - onehot`).
pub fn cross_entropy_with_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut probs = softmax(logits);
    let loss = -log_softmax(logits)[target];
    probs[target] -= 1.0;
    (loss, probs)
}

fn check_finite(logits: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} logit {pos}")));
    }
    Ok(())
}

/// Sum over levels of the categorical cross-entropy of the target's index.
pub fn c2far_nll(logits: &C2FLogits, target: &C2FEncoding) -> Result<f64> {
    if logits.levels.len() != target.indices.len() {
        return Err(Error::Shape(format!(
            "{} logit levels for a {}-level target",
            logits.levels.len(),
            target.indices.len()
        )));
    }
    let mut total = 0.0;
    for (level, (scores, &idx)) in logits.levels.iter().zip(&target.indices).enumerate() {
        check_finite(scores, &format!("level {level}"))?;
        if idx >= scores.len() {
            return Err(Error::Shape(format!("index {idx} beyond {} bins", scores.len())));
        }
        total -= log_softmax(scores)[idx];
    }
    Ok(total)
}

pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws level indices from `level_logits(level, coarser_indices)` in turn,
/// then a value uniformly inside the selected finest cell. Returns the
/// value and the sampled path.
pub fn c2far_sample<F, R>(mut level_logits: F, spec: &BinningSpec, rng: &mut R) -> (f64, Vec<usize>)
where
    F: FnMut(usize, &[usize]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let mut path = Vec::with_capacity(spec.levels);
    for level in 0..spec.levels {
        let scores = level_logits(level, &path);
        path.push(sample_categorical(&scores[..spec.bins], rng));
    }
    let (lo, hi) = spec.cell_bounds(&path);
    (lo + rng.gen::<f64>() * (hi - lo), path)
}

/// Type-7 (linear interpolation) percentile of sorted data, `p` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits the extent to the 1st and 99th percentiles of the supplied values.
pub fn fit_binning(values: &[f64], levels: usize, bins: usize) -> Result<BinningSpec> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "binning fit needs at least 2 values, got {}",
            values.len()
        )));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return Err(Error::NonFinite("binning fit values".into()));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut low = percentile_sorted(&sorted, 0.01);
    let mut high = percentile_sorted(&sorted, 0.99);
    if low >= high {
        // constant data: open a unit extent around it
        low -= 0.5;
        high = low + 1.0;
    }
    BinningSpec::new(low, high, levels, bins)
}

/// Sparse input encoding of one value inside block `slot`: the active
/// feature indices, or `None` for a missing value.
pub fn encode_active(value: Option<f64>, spec: &BinningSpec, slot: usize) -> Option<Vec<usize>> {
    let v = value.filter(|v| v.is_finite())?;
    let enc = c2f_encode(v, spec);
    let base = slot * spec.block_width();
    Some(
        enc.indices
            .iter()
            .enumerate()
            .map(|(level, &i)| base + level * spec.bins + i)
            .collect(),
    )
}

/// Dense input features for a list of (possibly missing) normalized values.
pub fn encode_input_features(values: &[Option<f64>], spec: &BinningSpec) -> Vec<f64> {
    let mut out = vec![0.0; values.len() * spec.block_width()];
    for (slot, v) in values.iter().enumerate() {
        if let Some(active) = encode_active(*v, spec, slot) {
            for i in active {
                out[i] = 1.0;
            }
        }
    }
    out
}

/// Single-level binning used by the flat-head ablation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatBinning {
    pub low: f64,
    pub high: f64,
    pub bins: usize,
}

impl FlatBinning {
    pub fn new(low: f64, high: f64, bins: usize) -> Result<Self> {
        if !(low < high) || bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "flat binning needs low < high and bins >= 2, got [{low}, {high}] x {bins}"
            )));
        }
        Ok(Self { low, high, bins })
    }

    pub fn bin_index(&self, value: f64) -> usize {
        let u = (value - self.low) / (self.high - self.low);
        if u < 0.0 {
            0
        } else {
            ((u * self.bins as f64).floor() as usize).min(self.bins - 1)
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.high - self.low) / self.bins as f64
    }
}

pub fn flat_nll(logits: &[f64], target_bin: usize) -> Result<f64> {
    check_finite(logits, "flat")?;
    if target_bin >= logits.len() {
        return Err(Error::Shape(format!("bin {target_bin} beyond {} logits", logits.len())));
    }
    Ok(-log_softmax(logits)[target_bin])
}

pub fn flat_sample<R: Rng + ?Sized>(logits: &[f64], spec: &FlatBinning, rng: &mut R) -> f64 {
    let bin = sample_categorical(&logits[..spec.bins], rng);
    spec.low + (bin as f64 + rng.gen::<f64>()) * spec.bin_width()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> BinningSpec {
        BinningSpec::new(-0.1, 1.3, 3, 12).unwrap()
    }

    #[test]
    fn fit_uniform_percentiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..1_000_000).map(|_| rng.gen::<f64>()).collect();
        let b = fit_binning(&values, 3, 12).unwrap();
        assert!((b.low - 0.01).abs() < 0.005, "{}", b.low);
        assert!((b.high - 0.99).abs() < 0.005, "{}", b.high);
    }

    #[test]
    fn fit_endpoint_mass_and_two_points() {
        let mut values = vec![0.0; 300];
        values.extend(vec![1.0; 300]);
        values.extend((0..400).map(|i| i as f64 / 400.0));
        let b = fit_binning(&values, 3, 12).unwrap();
        assert_eq!((b.low, b.high), (0.0, 1.0));
        let b = fit_binning(&[0.0, 1.0], 3, 12).unwrap();
        assert!((b.low - 0.01).abs() < 1e-15 && (b.high - 0.99).abs() < 1e-15);
        assert!(fit_binning(&[1.0], 3, 12).is_err());
    }

    #[test]
    fn encode_boundaries_and_flags() {
        let s = spec();
        assert_eq!(c2f_encode(s.low, &s).indices, vec![0, 0, 0]);
        assert!(c2f_encode(s.low, &s).in_extent());
        let below = c2f_encode(s.low - 1.0, &s);
        assert!(below.below && !below.above && below.indices == vec![0, 0, 0]);
        let above = c2f_encode(s.high, &s);
        assert!(above.above && above.indices == vec![11, 11, 11]);
    }

    #[test]
    fn encode_matches_brute_force_quantizer() {
        let s = spec();
        let eps = 1e-9;
        let v = s.low + (s.high - s.low) * (0.5 + eps);
        let enc = c2f_encode(v, &s);
        assert_eq!(enc.indices[0], 6);
        // scan all 12^3 cells for the one containing v
        let mut hits = vec![];
        for a in 0..12 {
            for b in 0..12 {
                for c in 0..12 {
                    let w = (s.high - s.low) / 1728.0;
                    let lo = s.low + (a * 144 + b * 12 + c) as f64 * w;
                    if lo <= v && v < lo + w {
                        hits.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(hits, vec![enc.indices]);
    }

    #[test]
    fn nll_uniform_and_onehot() {
        let s = spec();
        let target = c2f_encode(0.37, &s);
        let uniform = C2FLogits { levels: vec![vec![0.3; 12]; 3] };
        assert!((c2far_nll(&uniform, &target).unwrap() - 3.0 * 12f64.ln()).abs() < 1e-12);
        let onehot = C2FLogits {
            levels: target
                .indices
                .iter()
                .map(|&i| {
                    let mut v = vec![0.0; 12];
                    v[i] = 1000.0;
                    v
                })
                .collect(),
        };
        assert!(c2far_nll(&onehot, &target).unwrap() < 1e-12);
        let bad = C2FLogits { levels: vec![vec![f64::NAN; 12]; 3] };
        assert!(c2far_nll(&bad, &target).is_err());
    }

    #[test]
    fn nll_matches_high_precision_reference() {
        // Reference values from an independent mpmath (50 digits) evaluation of
        // -ln prod_l softmax(logits_l)[i_l] for the logits below.
        let logits = C2FLogits {
            levels: vec![
                vec![0.5, -1.25, 2.0, 0.0],
                vec![-0.75, 0.25, 1.5, -2.0],
            ],
        };
        let target = C2FEncoding { indices: vec![2, 0], below: false, above: false };
        let expected = 2.936_634_252_865_782_7;
        assert!((c2far_nll(&logits, &target).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sample_uniform_level0_frequencies() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 12];
        for _ in 0..n {
            let (_, path) = c2far_sample(|_, _| vec![0.0; 12], &s, &mut rng);
            counts[path[0]] += 1;
        }
        let p = 1.0 / 12.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd + 1.0, "{c}");
        }
    }

    #[test]
    fn sample_onehot_chain_stays_in_cell() {
        let s = spec();
        let chosen = [4usize, 9, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (lo, hi) = s.cell_bounds(&chosen);
        for _ in 0..1000 {
            let (v, path) = c2far_sample(
                |l, _| {
                    let mut x = vec![0.0; 12];
                    x[chosen[l]] = 1000.0;
                    x
                },
                &s,
                &mut rng,
            );
            assert_eq!(path, chosen);
            assert!(lo <= v && v < hi);
        }
    }

    #[test]
    fn input_features_layout() {
        let s = BinningSpec::new(0.0, 1.0, 3, 12).unwrap();
        let f = encode_input_features(&[Some(0.4)], &s);
        assert_eq!(f.len(), 36);
        assert_eq!(f.iter().filter(|&&x| x == 1.0).count(), 3);
        let f = encode_input_features(&[None], &s);
        assert!(f.iter().all(|&x| x == 0.0));
        let f = encode_input_features(&[Some(0.1); 6], &s);
        assert_eq!(f.len(), 6 * 36);
    }

    #[test]
    fn flat_head_basics() {
        let fb = FlatBinning::new(0.0, 1.0, 1024).unwrap();
        assert!((flat_nll(&vec![0.0; 1024], 17).unwrap() - 1024f64.ln()).abs() < 1e-12);
        let mut l = vec![0.0; 1024];
        l[17] = 1000.0;
        assert!(flat_nll(&l, 17).unwrap() < 1e-12);
        assert_eq!(fb.bin_index(-3.0), 0);
        assert_eq!(fb.bin_index(3.0), 1023);
    }

    #[test]
    fn flat_sample_frequencies_match_softmax() {
        let fb = FlatBinning::new(0.0, 1.0, 8).unwrap();
        let logits = [0.1, -0.5, 1.2, 0.0, 0.7, -1.0, 0.3, 0.9];
        let probs = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[fb.bin_index(flat_sample(&logits, &fb, &mut rng))] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn flat_and_uniform_c2f_agree_per_cell() {
        let s = BinningSpec::new(0.0, 1.0, 2, 5).unwrap();
        let c2f_logp: f64 = (0..2).map(|_| log_softmax(&[0.0; 5])[0]).sum();
        let flat_logp = log_softmax(&[0.0; 25])[0];
        assert!((c2f_logp - flat_logp).abs() < 1e-12);
        assert_eq!(s.num_cells(), 25);
    }

    proptest! {
        #[test]
        fn encode_is_monotone(a in -0.5f64..1.5, b in -0.5f64..1.5) {
            let s = spec();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let ea = c2f_encode(lo, &s);
            let eb = c2f_encode(hi, &s);
            prop_assert!(ea.indices <= eb.indices);
        }

        #[test]
        fn encoded_cell_contains_value(u in 0.0f64..1.0) {
            let s = spec();
            let v = s.low + u * (s.high - s.low);
            let enc = c2f_encode(v, &s);
            prop_assume!(enc.in_extent());
            let (lo, hi) = s.cell_bounds(&enc.indices);
            let tol = 1e-12;
            prop_assert!(lo - tol <= v && v < hi + tol);
        }

        #[test]
        fn flat_index_roundtrip(flat in 0usize..1728) {
            let s = spec();
            prop_assert_eq!(s.flat_index(&s.path_of_flat(flat)), flat);
        }
    }
}
