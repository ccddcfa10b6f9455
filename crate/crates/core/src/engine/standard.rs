//! The standard single-network pipeline: one recurrent stack per C2F level
//! walking the original series step by step with window-level scaling.

use crate::binning::{c2f_encode, log_softmax, BinningSpec};
use crate::error::{Error, Result};
use crate::seqnet::{SparseInput, StackParams};
use crate::series::{ScaleParams, Window};

/// Borrowed view of per-level stacks driven as a plain autoregressive model
/// with one value input (the previous value).
pub struct StandardPipeline<'a> {
    pub levels: &'a [StackParams],
    pub binning: &'a BinningSpec,
}

impl<'a> StandardPipeline<'a> {
    pub fn new(levels: &'a [StackParams], binning: &'a BinningSpec) -> Result<Self> {
        if levels.len() != binning.levels {
            return Err(Error::Shape(format!(
                "{} level networks for {} levels",
                levels.len(),
                binning.levels
            )));
        }
        Ok(Self { levels, binning })
    }

    fn input(&self, prev: Option<f64>, parent: &[usize]) -> SparseInput {
        let b = self.binning.bins;
        let mut x = SparseInput::new();
        if let Some(v) = prev {
            for (level, i) in c2f_encode(v, self.binning).indices.into_iter().enumerate() {
                x.push((level * b + i, 1.0));
            }
        }
        if !parent.is_empty() {
            let (lo, hi) = self.binning.cell_bounds(parent);
            let w = self.binning.block_width();
            x.push((w, lo));
            x.push((w + 1, hi));
        }
        x
    }

    /// Teacher-forced NLL (nats, binned) of the prediction range.
    pub fn nll(&self, window: &Window) -> Result<f64> {
        let scale = ScaleParams::fit(&window.conditioning)?;
        let z: Vec<f64> = window.values().iter().map(|&v| scale.apply(v)).collect();
        let t_len = window.context_len();
        let b = self.binning.bins;
        let mut total = 0.0;
        for (level, stack) in self.levels.iter().enumerate() {
            let mut states = stack.zero_states();
            for i in 0..z.len() {
                let path = c2f_encode(z[i], self.binning).indices;
                let prev = i.checked_sub(1).map(|p| z[p]);
                let x = self.input(prev, &path[..level]);
                let (next, logits) = stack.forward(&states, &x, None)?;
                states = next;
                if i >= t_len {
                    total += -log_softmax(&logits[..b])[path[level]];
                }
            }
        }
        Ok(total)
    }

    /// Greedy decoding over `prediction_len` steps: argmax bin per level,
    /// finest-cell midpoint as the value.
    pub fn greedy(&self, conditioning: &[f64], prediction_len: usize) -> Result<Vec<f64>> {
        let scale = ScaleParams::fit(conditioning)?;
        let b = self.binning.bins;
        let mut states: Vec<_> = self.levels.iter().map(StackParams::zero_states).collect();
        // previous value in original units, scaled on use
        let mut prev: Option<f64> = None;
        let advance = |states: &mut Vec<Vec<_>>, prev: Option<f64>, path_of: &mut dyn FnMut(usize, &[f64]) -> usize| -> Result<Vec<usize>> {
            let prev = prev.map(|v| scale.apply(v));
            let mut path = Vec::new();
            for (level, stack) in self.levels.iter().enumerate() {
                let x = self.input(prev, &path);
                let (next, logits) = stack.forward(&states[level], &x, None)?;
                states[level] = next;
                path.push(path_of(level, &logits[..b]));
            }
            Ok(path)
        };
        for &v in conditioning {
            let z = scale.apply(v);
            let known = c2f_encode(z, self.binning).indices;
            advance(&mut states, prev, &mut |level, _| known[level])?;
            prev = Some(v);
        }
        let mut out = Vec::with_capacity(prediction_len);
        for _ in 0..prediction_len {
            let path = advance(&mut states, prev, &mut |_, logits| {
                let mut best = 0;
                for (i, &x) in logits.iter().enumerate() {
                    if x > logits[best] {
                        best = i;
                    }
                }
                best
            })?;
            let (lo, hi) = self.binning.cell_bounds(&path);
            let y = scale.invert(lo + 0.5 * (hi - lo));
            out.push(y);
            prev = Some(y);
        }
        Ok(out)
    }
}
