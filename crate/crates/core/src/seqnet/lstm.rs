use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binning::cross_entropy_with_grad;
use crate::error::{Error, Result};

/// Sparse input vector as `(index, value)` pairs. One-hot encoded inputs
/// touch only a handful of columns, so the input projection costs
/// `O(active * H)` instead of `O(width * H)`.
pub type SparseInput = Vec<(usize, f64)>;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights of one long short-term memory cell. Gate order is
/// input, forget, cell, output; each weight row holds the `4H` gate
/// contributions of one input (or one recurrent) unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub input_width: usize,
    pub hidden: usize,
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub b_in: Vec<f64>,
    pub b_rec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Layer input: sparse for the first layer, the dense hidden vector of the
/// layer below otherwise.
#[derive(Debug, Clone, Copy)]
pub enum CellInput<'a> {
    Sparse(&'a [(usize, f64)]),
    Dense(&'a [f64]),
}

impl CellParams {
    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        Self {
            input_width,
            hidden,
            w_in: vec![0.0; input_width * 4 * hidden],
            w_rec: vec![0.0; hidden * 4 * hidden],
            b_in: vec![0.0; 4 * hidden],
            b_rec: vec![0.0; 4 * hidden],
        }
    }

    /// Weights uniform in `±1/sqrt(H)`, zero biases except a forget-gate bias of one.
    pub fn init<R: Rng + ?Sized>(input_width: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_width, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        for w in p.w_in.iter_mut().chain(p.w_rec.iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        for b in &mut p.b_in[hidden..2 * hidden] {
            *b = 1.0;
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.w_in.len() + self.w_rec.len() + self.b_in.len() + self.b_rec.len()
    }

    fn check_input(&self, input: CellInput<'_>) -> Result<()> {
        match input {
            CellInput::Sparse(pairs) => {
                if let Some(&(i, _)) = pairs.iter().find(|(i, _)| *i >= self.input_width) {
                    return Err(Error::Shape(format!(
                        "input index {i} outside width {}",
                        self.input_width
                    )));
                }
            }
            CellInput::Dense(x) => {
                if x.len() != self.input_width {
                    return Err(Error::Shape(format!(
                        "input width {} but cell expects {}",
                        x.len(),
                        self.input_width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Gate pre-activations into `z` (length `4H`).
    fn preactivate(&self, h_prev: &[f64], input: CellInput<'_>, z: &mut [f64]) {
        let g4 = 4 * self.hidden;
        for ((zi, a), b) in z.iter_mut().zip(&self.b_in).zip(&self.b_rec) {
            *zi = a + b;
        }
        match input {
            CellInput::Sparse(pairs) => {
                for &(i, v) in pairs {
                    axpy(v, &self.w_in[i * g4..(i + 1) * g4], z);
                }
            }
            CellInput::Dense(x) => {
                for (i, &v) in x.iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, &self.w_in[i * g4..(i + 1) * g4], z);
                    }
                }
            }
        }
        for (j, &hj) in h_prev.iter().enumerate() {
            if hj != 0.0 {
                axpy(hj, &self.w_rec[j * g4..(j + 1) * g4], z);
            }
        }
    }

    /// Applies gate nonlinearities in place and advances `c`, `h`.
    fn activate(&self, z: &mut [f64], c: &mut [f64], h: &mut [f64]) {
        let hd = self.hidden;
        for j in 0..hd {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hd + j]);
            let g = z[2 * hd + j].tanh();
            let o = sigmoid(z[3 * hd + j]);
            z[j] = i;
            z[hd + j] = f;
            z[2 * hd + j] = g;
            z[3 * hd + j] = o;
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }
}

pub fn cell_forward(params: &CellParams, state: &CellState, input: CellInput<'_>) -> Result<CellState> {
    params.check_input(input)?;
    let mut z = vec![0.0; 4 * params.hidden];
    params.preactivate(&state.h, input, &mut z);
    let mut next = state.clone();
    params.activate(&mut z, &mut next.c, &mut next.h);
    Ok(next)
}

/// Affine map from the top hidden state to output scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Projection {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, outputs);
        let bound = 1.0 / (inputs as f64).sqrt();
        for w in &mut p.w {
            *w = rng.gen_range(-bound..bound);
        }
        p
    }

    pub fn apply(&self, h: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.b
                .iter()
                .enumerate()
                .map(|(r, b)| b + dot(&self.w[r * self.inputs..(r + 1) * self.inputs], h)),
        );
    }
}

/// Stacked cells plus output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub cells: Vec<CellParams>,
    pub projection: Projection,
    pub inter_layer_dropout: f64,
}

/// Reusable buffers for inference stepping.
#[derive(Debug, Default, Clone)]
pub struct StepScratch {
    z: Vec<f64>,
    x: Vec<f64>,
}

impl StackParams {
    pub fn init<R: Rng + ?Sized>(
        input_width: usize,
        hidden: usize,
        layers: usize,
        outputs: usize,
        inter_layer_dropout: f64,
        rng: &mut R,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| CellParams::init(if l == 0 { input_width } else { hidden }, hidden, rng))
            .collect();
        Self {
            cells,
            projection: Projection::init(hidden, outputs, rng),
            inter_layer_dropout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cells: self
                .cells
                .iter()
                .map(|c| CellParams::zeros(c.input_width, c.hidden))
                .collect(),
            projection: Projection::zeros(self.projection.inputs, self.projection.outputs),
            inter_layer_dropout: self.inter_layer_dropout,
        }
    }

    pub fn hidden(&self) -> usize {
        self.projection.inputs
    }

    pub fn input_width(&self) -> usize {
        self.cells[0].input_width
    }

    pub fn outputs(&self) -> usize {
        self.projection.outputs
    }

    pub fn zero_states(&self) -> Vec<CellState> {
        self.cells.iter().map(|c| CellState::zeros(c.hidden)).collect()
    }

    /// Closed form: per cell `4H(I + H) + 8H`, plus `O(H + 1)` for the projection.
    pub fn count_params(input_width: usize, hidden: usize, layers: usize, outputs: usize) -> usize {
        let cell = |i: usize| 4 * hidden * (i + hidden) + 8 * hidden;
        cell(input_width) + (layers.saturating_sub(1)) * cell(hidden) + outputs * (hidden + 1)
    }

    pub fn num_params(&self) -> usize {
        self.cells.iter().map(CellParams::num_params).sum::<usize>()
            + self.projection.w.len()
            + self.projection.b.len()
    }

    /// Every parameter tensor, in a fixed order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * self.cells.len() + 2);
        for c in &self.cells {
            out.extend([&c.w_in[..], &c.w_rec[..], &c.b_in[..], &c.b_rec[..]]);
        }
        out.push(&self.projection.w);
        out.push(&self.projection.b);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.cells.len() + 2);
        for c in &mut self.cells {
            out.push(&mut c.w_in);
            out.push(&mut c.w_rec);
            out.push(&mut c.b_in);
            out.push(&mut c.b_rec);
        }
        out.push(&mut self.projection.w);
        out.push(&mut self.projection.b);
        out
    }

    /// Functional single step: returns new states and output scores. In
    /// train mode inter-layer dropout masks are drawn from `rng`.
    pub fn forward(
        &self,
        states: &[CellState],
        input: &[(usize, f64)],
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Vec<CellState>, Vec<f64>)> {
        if states.len() != self.cells.len() {
            return Err(Error::Shape(format!(
                "{} states for {} layers",
                states.len(),
                self.cells.len()
            )));
        }
        let mut rng = rng;
        let mut next = Vec::with_capacity(states.len());
        let mut below: Vec<f64> = Vec::new();
        for (l, (cell, state)) in self.cells.iter().zip(states).enumerate() {
            let input = if l == 0 {
                CellInput::Sparse(input)
            } else {
                CellInput::Dense(&below)
            };
            let s = cell_forward(cell, state, input)?;
            below = s.h.clone();
            if l + 1 < self.cells.len() && self.inter_layer_dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let keep = 1.0 - self.inter_layer_dropout;
                    for v in &mut below {
                        *v = if r.gen::<f64>() < self.inter_layer_dropout { 0.0 } else { *v / keep };
                    }
                }
            }
            next.push(s);
        }
        let mut logits = Vec::new();
        self.projection.apply(&below, &mut logits);
        Ok((next, logits))
    }

    /// In-place evaluation-mode step for inference loops.
    pub fn step(
        &self,
        states: &mut [CellState],
        input: &[(usize, f64)],
        logits: &mut Vec<f64>,
        scratch: &mut StepScratch,
    ) {
        let g4 = 4 * self.hidden();
        scratch.z.resize(g4, 0.0);
        for (l, cell) in self.cells.iter().enumerate() {
            let (lower, upper) = states.split_at_mut(l);
            let state = &mut upper[0];
            if l == 0 {
                cell.preactivate(&state.h, CellInput::Sparse(input), &mut scratch.z);
            } else {
                scratch.x.clear();
                scratch.x.extend_from_slice(&lower[l - 1].h);
                cell.preactivate(&state.h, CellInput::Dense(&scratch.x), &mut scratch.z);
            }
            cell.activate(&mut scratch.z, &mut state.c, &mut state.h);
        }
        self.projection.apply(&states[states.len() - 1].h, logits);
    }
}

pub fn stack_forward(
    params: &StackParams,
    states: &[CellState],
    input: &[(usize, f64)],
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(Vec<CellState>, Vec<f64>)> {
    params.forward(states, input, rng)
}

/// Per-layer activations recorded for backpropagation.
struct LayerTape {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    /// Dropout multipliers applied to this layer's output before the next layer.
    mask: Option<Vec<f64>>,
}

/// Backpropagation through time for one sequence.
///
/// `targets[t] = Some(i)` adds `weight * CE(softmax(logits_t[..loss_width]), i)`
/// to the loss. Returns the weighted loss and accumulates exact gradients
/// into `grads`. With `rng` set, inter-layer dropout is active.
pub fn bptt_gradients(
    params: &StackParams,
    inputs: &[SparseInput],
    targets: &[Option<usize>],
    loss_width: usize,
    weight: f64,
    grads: &mut StackParams,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<f64> {
    let steps = inputs.len();
    if targets.len() != steps {
        return Err(Error::Shape(format!(
            "{} targets for {} input steps",
            targets.len(),
            steps
        )));
    }
    if loss_width > params.outputs() {
        return Err(Error::Shape(format!(
            "loss width {loss_width} exceeds {} outputs",
            params.outputs()
        )));
    }
    for x in inputs {
        params.cells[0].check_input(CellInput::Sparse(x))?;
    }
    let hd = params.hidden();
    let g4 = 4 * hd;
    let layers = params.cells.len();
    let dropout = params.inter_layer_dropout;
    let mut rng = rng;

    // forward
    let mut tapes: Vec<LayerTape> = (0..layers)
        .map(|l| LayerTape {
            gates: vec![0.0; steps * g4],
            c: vec![0.0; steps * hd],
            h: vec![0.0; steps * hd],
            mask: (l + 1 < layers && dropout > 0.0 && rng.is_some()).then(|| vec![0.0; steps * hd]),
        })
        .collect();
    let mut x_buf = vec![0.0; hd];
    let zeros = vec![0.0; hd];
    for t in 0..steps {
        for l in 0..layers {
            let cell = &params.cells[l];
            if l > 0 {
                let (lo, _) = tapes.split_at(l);
                let below = &lo[l - 1];
                x_buf.copy_from_slice(&below.h[t * hd..(t + 1) * hd]);
                if let Some(mask) = &below.mask {
                    for (x, m) in x_buf.iter_mut().zip(&mask[t * hd..(t + 1) * hd]) {
                        *x *= m;
                    }
                }
            }
            let tape = &mut tapes[l];
            let (h_prev, c_prev) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                (
                    tape.h[(t - 1) * hd..t * hd].to_vec(),
                    tape.c[(t - 1) * hd..t * hd].to_vec(),
                )
            };
            let z = &mut tape.gates[t * g4..(t + 1) * g4];
            let input = if l == 0 {
                CellInput::Sparse(&inputs[t])
            } else {
                CellInput::Dense(&x_buf)
            };
            cell.preactivate(&h_prev, input, z);
            let mut c = c_prev;
            let mut h = vec![0.0; hd];
            cell.activate(z, &mut c, &mut h);
            tape.c[t * hd..(t + 1) * hd].copy_from_slice(&c);
            tape.h[t * hd..(t + 1) * hd].copy_from_slice(&h);
            if let (Some(mask), Some(r)) = (tape.mask.as_mut(), rng.as_deref_mut()) {
                let keep = 1.0 - dropout;
                for m in &mut mask[t * hd..(t + 1) * hd] {
                    *m = if r.gen::<f64>() < dropout { 0.0 } else { 1.0 / keep };
                }
            }
        }
    }

    // loss and output gradients
    let top = &tapes[layers - 1];
    let proj = &params.projection;
    let mut loss = 0.0;
    let mut dh_top = vec![0.0; steps * hd];
    let mut logits = Vec::with_capacity(proj.outputs);
    for t in 0..steps {
        let Some(target) = targets[t] else { continue };
        let h = &top.h[t * hd..(t + 1) * hd];
        proj.apply(h, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits at step {t}")));
        }
        let (ce, dlogits) = cross_entropy_with_grad(&logits[..loss_width], target);
        if !ce.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {t}")));
        }
        loss += weight * ce;
        let dh = &mut dh_top[t * hd..(t + 1) * hd];
        for (r, &d) in dlogits.iter().enumerate() {
            let d = d * weight;
            let row = &proj.w[r * hd..(r + 1) * hd];
            axpy(d, h, &mut grads.projection.w[r * hd..(r + 1) * hd]);
            grads.projection.b[r] += d;
            axpy(d, row, dh);
        }
    }

    // backward through time, top layer first at each step
    let mut dh_next = vec![vec![0.0; hd]; layers];
    let mut dc_next = vec![vec![0.0; hd]; layers];
    let mut dz = vec![0.0; g4];
    let mut dx = vec![0.0; hd];
    for t in (0..steps).rev() {
        // gradient flowing into layer l's output from above at step t
        let mut from_above: Vec<f64> = dh_top[t * hd..(t + 1) * hd].to_vec();
        for l in (0..layers).rev() {
            let cell = &params.cells[l];
            let tape = &tapes[l];
            let gates = &tape.gates[t * g4..(t + 1) * g4];
            let c = &tape.c[t * hd..(t + 1) * hd];
            for j in 0..hd {
                let i = gates[j];
                let f = gates[hd + j];
                let g = gates[2 * hd + j];
                let o = gates[3 * hd + j];
                let c_prev = if t == 0 { 0.0 } else { tape.c[(t - 1) * hd + j] };
                let tc = c[j].tanh();
                let dh = from_above[j] + dh_next[l][j];
                let dc = dc_next[l][j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[hd + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - g * g);
                dz[3 * hd + j] = dh * tc * o * (1.0 - o);
                dc_next[l][j] = dc * f;
            }
            let grad = &mut grads.cells[l];
            axpy(1.0, &dz, &mut grad.b_in);
            axpy(1.0, &dz, &mut grad.b_rec);
            if t > 0 {
                let h_prev = &tape.h[(t - 1) * hd..t * hd];
                for j in 0..hd {
                    if h_prev[j] != 0.0 {
                        axpy(h_prev[j], &dz, &mut grad.w_rec[j * g4..(j + 1) * g4]);
                    }
                    dh_next[l][j] = dot(&cell.w_rec[j * g4..(j + 1) * g4], &dz);
                }
            } else {
                dh_next[l].iter_mut().for_each(|v| *v = 0.0);
            }
            if l == 0 {
                for &(i, v) in &inputs[t] {
                    axpy(v, &dz, &mut grad.w_in[i * g4..(i + 1) * g4]);
                }
            } else {
                let below = &tapes[l - 1];
                for j in 0..hd {
                    let mut x = below.h[t * hd + j];
                    if let Some(mask) = &below.mask {
                        x *= mask[t * hd + j];
                    }
                    if x != 0.0 {
                        axpy(x, &dz, &mut grad.w_in[j * g4..(j + 1) * g4]);
                    }
                    dx[j] = dot(&cell.w_in[j * g4..(j + 1) * g4], &dz);
                    if let Some(mask) = &below.mask {
                        dx[j] *= mask[t * hd + j];
                    }
                }
                from_above.copy_from_slice(&dx);
            }
        }
    }
    Ok(loss)
}

/// Zeroes each entry with probability `p` and rescales survivors by `1/(1-p)`;
/// identity outside train mode.
pub fn input_dropout<R: Rng + ?Sized>(features: &mut [f64], p: f64, rng: &mut R, train_mode: bool) {
    if !train_mode || p <= 0.0 {
        return;
    }
    let keep = 1.0 - p;
    for v in features {
        *v = if rng.gen::<f64>() < p { 0.0 } else { *v / keep };
    }
}

/// [`input_dropout`] on a sparse input; dropped entries are removed.
pub fn sparse_input_dropout<R: Rng + ?Sized>(features: &mut SparseInput, p: f64, rng: &mut R) {
    if p <= 0.0 {
        return;
    }
    let keep = 1.0 - p;
    features.retain_mut(|(_, v)| {
        if rng.gen::<f64>() < p {
            false
        } else {
            *v /= keep;
            true
        }
    });
}
