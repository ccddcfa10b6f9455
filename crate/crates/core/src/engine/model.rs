use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{
    autoregressive_refs, build_schedule, low2high_order, num_value_refs, rank_by_position,
    GenerationMode,
};
use crate::binning::{c2f_encode, log_softmax, sample_categorical, BinningSpec, FlatBinning};
use crate::error::{Error, Result};
use crate::seqnet::{bptt_gradients, sparse_input_dropout, CellState, SparseInput, StackParams, StepScratch};
use crate::series::{check_divisible, original_index, reverse_blocks, Ordering, ScaleParams, Window};

/// Extra coarse-level outputs reserved for parametric tails. They are part
/// of the parameter layout but ignored by the clamped likelihood.
pub const TAIL_OUTPUTS: usize = 2;
/// Finer C2F levels receive the bounds of the parent cell as two inputs.
pub const PARENT_INPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    C2f,
    Flat { bins: usize },
}

/// Architecture and window geometry of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_subseries: usize,
    pub ordering: Ordering,
    pub mode: GenerationMode,
    pub hidden: usize,
    pub layers: usize,
    pub levels: usize,
    pub bins: usize,
    pub head: Head,
    pub context_len: usize,
    pub prediction_len: usize,
    pub inter_layer_dropout: f64,
    pub input_dropout: f64,
    pub lag_period: Option<usize>,
    pub covariate_dims: usize,
    /// The first this many covariates are in target units and get the
    /// sub-series scale; the rest (e.g. seasonal positions) pass through.
    pub scaled_covariate_dims: usize,
    /// High-frequency half of the low-to-high scheme: adds the next value at
    /// a position `p % P == P - 1` as an input and treats those positions as
    /// fixed constraints.
    pub lookahead_period: Option<usize>,
    /// Reverse every block of this many values before modelling.
    pub block_reverse: Option<usize>,
    /// Model only positions `p % P == P - 1` of each window.
    pub subsample_period: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_subseries: 1,
            ordering: Ordering::Regular,
            mode: GenerationMode::Alternating,
            hidden: 64,
            layers: 1,
            levels: crate::binning::DEFAULT_LEVELS,
            bins: crate::binning::DEFAULT_BINS,
            head: Head::C2f,
            context_len: 168,
            prediction_len: 168,
            inter_layer_dropout: 0.001,
            input_dropout: 0.0,
            lag_period: None,
            covariate_dims: 0,
            scaled_covariate_dims: 0,
            lookahead_period: None,
            block_reverse: None,
            subsample_period: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_subseries == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("K, hidden and layers must be positive".into());
        }
        if self.levels == 0 || self.bins < 2 {
            return bad(format!("invalid binning L={} B={}", self.levels, self.bins));
        }
        if let Head::Flat { bins } = self.head {
            if bins < 2 {
                return bad("flat head needs at least 2 bins".into());
            }
        }
        if !(0.0..1.0).contains(&self.input_dropout) || !(0.0..1.0).contains(&self.inter_layer_dropout) {
            return bad("dropout probabilities must lie in [0, 1)".into());
        }
        let (t, n) = self.model_lengths()?;
        check_divisible(t, n, self.num_subseries)?;
        if self.scaled_covariate_dims > self.covariate_dims {
            return bad("more scaled covariates than covariates".into());
        }
        if let Some(p) = self.lookahead_period {
            if self.num_subseries != 1 || p < 2 || t % p != 0 || n % p != 0 {
                return bad(format!("lookahead period {p} needs K=1 and T, N divisible by it"));
            }
        }
        if let Some(b) = self.block_reverse {
            if b == 0 || t % b != 0 || n % b != 0 {
                return bad(format!("block reversal {b} needs T, N divisible by it"));
            }
        }
        Ok(())
    }

    /// Conditioning and prediction lengths as seen by the networks.
    pub fn model_lengths(&self) -> Result<(usize, usize)> {
        match self.subsample_period {
            Some(p) if p == 0 || !self.context_len.is_multiple_of(p) || !self.prediction_len.is_multiple_of(p) => {
                Err(Error::InvalidArgument(format!(
                    "subsample period {p} must divide T={} and N={}",
                    self.context_len, self.prediction_len
                )))
            }
            Some(p) => Ok((self.context_len / p, self.prediction_len / p)),
            None => Ok((self.context_len, self.prediction_len)),
        }
    }

    fn block_width(&self) -> usize {
        self.levels * self.bins
    }

    pub fn num_value_slots(&self, k: usize) -> usize {
        num_value_refs(k, self.num_subseries, self.mode)
            + usize::from(self.lag_period.is_some())
            + usize::from(self.lookahead_period.is_some())
    }

    /// Width of the shared step features of sub-model `k`: value blocks,
    /// a missing-lag flag when lags are on, then covariates.
    pub fn base_width(&self, k: usize) -> usize {
        self.num_value_slots(k) * self.block_width()
            + usize::from(self.lag_period.is_some())
            + self.covariate_dims
    }

    pub fn num_heads(&self) -> usize {
        match self.head {
            Head::C2f => self.levels,
            Head::Flat { .. } => 1,
        }
    }

    fn level_input_width(&self, k: usize, level: usize) -> usize {
        self.base_width(k) + if level > 0 { PARENT_INPUTS } else { 0 }
    }

    fn level_outputs(&self, level: usize) -> usize {
        match self.head {
            Head::C2f if level == 0 => self.bins + TAIL_OUTPUTS,
            Head::C2f => self.bins,
            Head::Flat { bins } => bins,
        }
    }

    fn loss_width(&self) -> usize {
        match self.head {
            Head::C2f => self.bins,
            Head::Flat { bins } => bins,
        }
    }

    /// Closed-form parameter count of the full model.
    pub fn count_params(&self) -> usize {
        (0..self.num_subseries)
            .flat_map(|k| (0..self.num_heads()).map(move |l| (k, l)))
            .map(|(k, l)| {
                StackParams::count_params(
                    self.level_input_width(k, l),
                    self.hidden,
                    self.layers,
                    self.level_outputs(l),
                )
            })
            .sum()
    }

    /// Applies subsampling and block reversal to a raw window.
    pub fn transform_window(&self, window: &Window) -> Result<Window> {
        let mut w = window.clone();
        if let Some(p) = self.subsample_period {
            check_divisible(w.context_len(), w.prediction_len(), p)?;
            let pick = |v: &[f64]| v.iter().skip(p - 1).step_by(p).copied().collect::<Vec<_>>();
            w.conditioning = pick(&window.conditioning);
            w.prediction = pick(&window.prediction);
            w.covariates = window
                .covariates
                .as_ref()
                .map(|c| c.iter().skip(p - 1).step_by(p).cloned().collect());
        }
        if let Some(b) = self.block_reverse {
            let t = w.context_len();
            let all = reverse_blocks(&w.values(), b)?;
            w.conditioning = all[..t].to_vec();
            w.prediction = all[t..].to_vec();
            if let Some(c) = &w.covariates {
                let mut rev = Vec::with_capacity(c.len());
                for block in c.chunks(b) {
                    rev.extend(block.iter().rev().cloned());
                }
                w.covariates = Some(rev);
            }
        }
        Ok(w)
    }

    /// Maps a generated prediction track back to the caller's order.
    pub fn untransform_prediction(&self, values: Vec<f64>) -> Result<Vec<f64>> {
        match self.block_reverse {
            Some(b) => reverse_blocks(&values, b),
            None => Ok(values),
        }
    }

    /// Preprocesses a window and fits the per-sub-series scales. With
    /// `prediction_len` set, a shorter (inference) prediction range is padded.
    pub fn prepare(&self, window: &Window, prediction_len: Option<usize>) -> Result<PreparedWindow> {
        let mut w = window.clone();
        if let Some(n) = prediction_len {
            let n_raw = n * self.subsample_period.unwrap_or(1);
            w.prediction = vec![f64::NAN; n_raw];
        }
        let w = self.transform_window(&w)?;
        let k = self.num_subseries;
        check_divisible(w.context_len(), w.prediction_len(), k)?;
        if w.context_len() == 0 {
            return Err(Error::Empty("conditioning range"));
        }
        if self.covariate_dims > 0 {
            match &w.covariates {
                Some(c) if c.len() == w.len() && c.iter().all(|r| r.len() == self.covariate_dims) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "model expects {} covariates for each of {} steps",
                        self.covariate_dims,
                        w.len()
                    )))
                }
            }
        }
        let t_sub = w.context_len() / k;
        let values = w.values();
        let scales = (0..k)
            .map(|s| {
                let cond: Vec<f64> = (0..t_sub)
                    .map(|j| values[original_index(s, j, k, self.ordering)])
                    .collect();
                ScaleParams::fit(&cond)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedWindow {
            values,
            context_len: w.context_len(),
            prediction_len: w.prediction_len(),
            covariates: w.covariates,
            scales,
        })
    }

    fn is_constrained(&self, position: usize) -> bool {
        self.lookahead_period.is_some_and(|p| position % p == p - 1)
    }

    fn locate(&self, position: usize) -> (usize, usize) {
        let k = self.num_subseries;
        (self.ordering.sub_index(position % k, k), position / k)
    }
}

/// Per-sub-series networks: one stack per C2F level (or a single stack for
/// the flat head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModel {
    pub levels: Vec<StackParams>,
}

impl SubModel {
    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self.levels.iter().map(StackParams::zeros_like).collect(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.levels.iter().flat_map(|s| s.blocks()).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.levels.iter_mut().flat_map(|s| s.blocks_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.levels.iter().map(StackParams::num_params).sum()
    }
}

/// K per-sub-series networks with shared binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SutraNetModel {
    pub config: ModelConfig,
    pub binning: BinningSpec,
    pub nets: Vec<SubModel>,
    pub trained: bool,
}

/// A window after model-specific preprocessing, with per-sub-series scales.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub values: Vec<f64>,
    pub context_len: usize,
    pub prediction_len: usize,
    pub covariates: Option<Vec<Vec<f64>>>,
    pub scales: Vec<ScaleParams>,
}

/// Teacher-forced negative log-likelihood split into its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllParts {
    /// Sum of categorical cross-entropies over predicted points (nats).
    pub binned: f64,
    /// Sum of log cell widths in original units; adding it turns `binned`
    /// into a density NLL comparable across normalizations.
    pub log_cell_width: f64,
    pub points: usize,
}

impl NllParts {
    pub fn continuous(&self) -> f64 {
        self.binned + self.log_cell_width
    }

    pub fn add(&mut self, other: NllParts) {
        self.binned += other.binned;
        self.log_cell_width += other.log_cell_width;
        self.points += other.points;
    }
}

/// Drawn or greedy choice of bin paths during generation.
pub enum Decoder<'a> {
    Sample(&'a mut dyn RngCore),
    Greedy,
}

/// Per-position availability plan for one window geometry.
struct Plan {
    /// `refs[k][t]`: value positions per slot, `None` if missing or not yet generated.
    refs: Vec<Vec<Vec<Option<usize>>>>,
    /// Prediction-range positions in generation order.
    order: Vec<usize>,
}

impl SutraNetModel {
    pub fn new(config: ModelConfig, binning: BinningSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        if binning.levels != config.levels || binning.bins != config.bins {
            return Err(Error::InvalidArgument(format!(
                "binning L={} B={} does not match model L={} B={}",
                binning.levels, binning.bins, config.levels, config.bins
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = (0..config.num_subseries)
            .map(|k| SubModel {
                levels: (0..config.num_heads())
                    .map(|l| {
                        StackParams::init(
                            config.level_input_width(k, l),
                            config.hidden,
                            config.layers,
                            config.level_outputs(l),
                            if config.layers > 1 { config.inter_layer_dropout } else { 0.0 },
                            &mut rng,
                        )
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            config,
            binning,
            nets,
            trained: false,
        })
    }

    /// Checks that every network has the widths the configuration implies.
    pub fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        if self.nets.len() != cfg.num_subseries {
            return Err(Error::Shape(format!("{} sub-models for K={}", self.nets.len(), cfg.num_subseries)));
        }
        for (k, net) in self.nets.iter().enumerate() {
            if net.levels.len() != cfg.num_heads() {
                return Err(Error::Shape(format!("sub-model {k} has {} heads", net.levels.len())));
            }
            for (l, stack) in net.levels.iter().enumerate() {
                let want = (cfg.level_input_width(k, l), cfg.hidden, cfg.level_outputs(l));
                let got = (stack.input_width(), stack.hidden(), stack.outputs());
                if want != got || stack.cells.len() != cfg.layers {
                    return Err(Error::Shape(format!(
                        "sub-model {k} head {l}: (input, hidden, outputs) {got:?}, expected {want:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(SubModel::num_params).sum()
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn flat_binning(&self) -> Option<FlatBinning> {
        match self.config.head {
            Head::Flat { bins } => Some(FlatBinning {
                low: self.binning.low,
                high: self.binning.high,
                bins,
            }),
            Head::C2f => None,
        }
    }

    pub fn transform_window(&self, window: &Window) -> Result<Window> {
        self.config.transform_window(window)
    }

    pub fn prepare(&self, window: &Window, prediction_len: Option<usize>) -> Result<PreparedWindow> {
        self.config.prepare(window, prediction_len)
    }

    pub fn untransform_prediction(&self, values: Vec<f64>) -> Result<Vec<f64>> {
        self.config.untransform_prediction(values)
    }


    fn plan(&self, context_len: usize, prediction_len: usize) -> Result<Plan> {
        let cfg = &self.config;
        let k_count = cfg.num_subseries;
        let total = context_len + prediction_len;
        let (t_sub, n_sub) = (context_len / k_count, prediction_len / k_count);
        let order: Vec<usize> = if let Some(p) = cfg.lookahead_period {
            low2high_order(p, context_len, prediction_len)?
        } else {
            build_schedule(k_count, cfg.ordering, cfg.mode, t_sub, n_sub)?
                .iter()
                .map(|e| e.position)
                .collect()
        };
        let rank = rank_by_position(&order, context_len);
        let available = |p: usize, cur: usize| {
            p < context_len || (cur >= context_len && rank[p - context_len] < rank[cur - context_len])
        };
        let refs = (0..k_count)
            .map(|k| {
                (0..t_sub + n_sub)
                    .map(|t| {
                        let cur = original_index(k, t, k_count, cfg.ordering);
                        let mut slots: Vec<Option<usize>> = autoregressive_refs(k, t, k_count, cfg.mode)
                            .into_iter()
                            .map(|r| r.map(|(j, s)| original_index(j, s, k_count, cfg.ordering)))
                            .collect();
                        if let Some(lag) = cfg.lag_period {
                            slots.push(cur.checked_sub(lag));
                        }
                        if let Some(p) = cfg.lookahead_period {
                            let next = cur + (p - 1 - cur % p);
                            slots.push((next < total).then_some(next));
                        }
                        slots
                            .into_iter()
                            .map(|s| s.filter(|&p| available(p, cur)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Plan { refs, order })
    }

    /// Shared step features of sub-model `k` at time `t`.
    fn base_features(
        &self,
        k: usize,
        t: usize,
        plan: &Plan,
        prep: &PreparedWindow,
        values: &[f64],
        out: &mut SparseInput,
    ) {
        let cfg = &self.config;
        let spec = &self.binning;
        let bw = cfg.block_width();
        let scale = &prep.scales[k];
        out.clear();
        let refs = &plan.refs[k][t];
        for (slot, r) in refs.iter().enumerate() {
            if let Some(p) = *r {
                let v = values[p];
                if !v.is_finite() {
                    continue;
                }
                let enc = c2f_encode(scale.apply(v), spec);
                for (level, &i) in enc.indices.iter().enumerate() {
                    out.push((slot * bw + level * spec.bins + i, 1.0));
                }
            }
        }
        let mut base = refs.len() * bw;
        if cfg.lag_period.is_some() {
            let lag_slot = num_value_refs(k, cfg.num_subseries, cfg.mode);
            if refs[lag_slot].is_none() {
                out.push((base, 1.0));
            }
            base += 1;
        }
        if let Some(cov) = &prep.covariates {
            let pos = original_index(k, t, cfg.num_subseries, cfg.ordering);
            for (d, &x) in cov[pos].iter().enumerate() {
                let x = if d < cfg.scaled_covariate_dims { scale.apply(x) } else { x };
                if x != 0.0 {
                    out.push((base + d, x));
                }
            }
        }
    }

    fn with_parent(&self, k: usize, base: &SparseInput, path: &[usize], out: &mut SparseInput) {
        out.clear();
        out.extend_from_slice(base);
        let (lo, hi) = self.binning.cell_bounds(path);
        let w0 = self.config.base_width(k);
        out.push((w0, lo));
        out.push((w0 + 1, hi));
    }

    /// Target bin indices of a normalized value, one per head.
    fn target_path(&self, normalized: f64) -> Vec<usize> {
        match self.flat_binning() {
            Some(fb) => vec![fb.bin_index(normalized)],
            None => c2f_encode(normalized, &self.binning).indices,
        }
    }

    fn log_cell_width(&self, scale: &ScaleParams) -> f64 {
        let w = match self.flat_binning() {
            Some(fb) => fb.bin_width(),
            None => self.binning.finest_width(),
        };
        (w * scale.range()).ln()
    }

    /// Teacher-forced input and target sequences of sub-model `k`, per head.
    #[allow(clippy::type_complexity)]
    fn sequences(
        &self,
        k: usize,
        plan: &Plan,
        prep: &PreparedWindow,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> (Vec<Vec<SparseInput>>, Vec<Vec<Option<usize>>>) {
        let cfg = &self.config;
        let heads = cfg.num_heads();
        let steps = plan.refs[k].len();
        let t_sub = prep.context_len / cfg.num_subseries;
        let mut inputs = vec![Vec::with_capacity(steps); heads];
        let mut targets = vec![Vec::with_capacity(steps); heads];
        let mut base = SparseInput::new();
        for t in 0..steps {
            self.base_features(k, t, plan, prep, &prep.values, &mut base);
            if cfg.input_dropout > 0.0 {
                if let Some(r) = dropout_rng.as_deref_mut() {
                    sparse_input_dropout(&mut base, cfg.input_dropout, r);
                }
            }
            let pos = original_index(k, t, cfg.num_subseries, cfg.ordering);
            let path = self.target_path(prep.scales[k].apply(prep.values[pos]));
            let scored = t >= t_sub && !cfg.is_constrained(pos);
            for l in 0..heads {
                let mut x = SparseInput::new();
                if l == 0 {
                    x.clone_from(&base);
                } else {
                    self.with_parent(k, &base, &path[..l], &mut x);
                }
                inputs[l].push(x);
                targets[l].push(scored.then_some(path[l]));
            }
        }
        (inputs, targets)
    }

    /// Teacher-forced NLL of sub-model `k` on a prepared window.
    pub fn subseries_nll(&self, k: usize, prep: &PreparedWindow) -> Result<NllParts> {
        self.check_shapes()?;
        let plan = self.plan(prep.context_len, prep.prediction_len)?;
        self.subseries_nll_with_plan(k, prep, &plan)
    }

    fn subseries_nll_with_plan(&self, k: usize, prep: &PreparedWindow, plan: &Plan) -> Result<NllParts> {
        let (inputs, targets) = self.sequences(k, plan, prep, None);
        let loss_width = self.config.loss_width();
        let mut parts = NllParts::default();
        for (l, stack) in self.nets[k].levels.iter().enumerate() {
            let mut states = stack.zero_states();
            let mut scratch = StepScratch::default();
            let mut logits = Vec::new();
            for (t, (x, target)) in inputs[l].iter().zip(&targets[l]).enumerate() {
                stack.step(&mut states, x, &mut logits, &mut scratch);
                if let Some(i) = *target {
                    let ce = -log_softmax(&logits[..loss_width])[i];
                    if !ce.is_finite() {
                        return Err(Error::NonFinite(format!("NLL of sub-series {k} at step {t}")));
                    }
                    parts.binned += ce;
                }
            }
        }
        let points = targets[0].iter().filter(|t| t.is_some()).count();
        parts.points = points;
        parts.log_cell_width = points as f64 * self.log_cell_width(&prep.scales[k]);
        Ok(parts)
    }

    /// Sum over sub-series of teacher-forced NLL on one (raw) window.
    pub fn teacher_forced_nll(&self, window: &Window) -> Result<f64> {
        Ok(self.teacher_forced_parts(window)?.binned)
    }

    pub fn teacher_forced_parts(&self, window: &Window) -> Result<NllParts> {
        self.check_shapes()?;
        let prep = self.prepare(window, None)?;
        let plan = self.plan(prep.context_len, prep.prediction_len)?;
        let mut total = NllParts::default();
        for k in 0..self.config.num_subseries {
            total.add(self.subseries_nll_with_plan(k, &prep, &plan)?);
        }
        Ok(total)
    }

    /// Per-sub-series NLL terms, evaluated on scoped threads when `parallel`.
    pub fn per_subseries_nll(&self, window: &Window, parallel: bool) -> Result<Vec<f64>> {
        self.check_shapes()?;
        let prep = self.prepare(window, None)?;
        let plan = self.plan(prep.context_len, prep.prediction_len)?;
        let ks = 0..self.config.num_subseries;
        if parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = ks
                    .map(|k| {
                        let (prep, plan) = (&prep, &plan);
                        scope.spawn(move || self.subseries_nll_with_plan(k, prep, plan).map(|p| p.binned))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("NLL worker panicked"))
                    .collect()
            })
        } else {
            ks.map(|k| self.subseries_nll_with_plan(k, &prep, &plan).map(|p| p.binned))
                .collect()
        }
    }

    /// Accumulates `weight`-scaled gradients of the teacher-forced NLL of
    /// one window into `grads` (one entry per sub-model). Returns the
    /// weighted loss.
    pub fn accumulate_gradients(
        &self,
        window: &Window,
        weight: f64,
        grads: &mut [SubModel],
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        self.check_shapes()?;
        let prep = self.prepare(window, None)?;
        let plan = self.plan(prep.context_len, prep.prediction_len)?;
        let loss_width = self.config.loss_width();
        let mut loss = 0.0;
        for (k, (net, grad)) in self.nets.iter().zip(grads.iter_mut()).enumerate() {
            let (inputs, targets) = self.sequences(k, &plan, &prep, Some(&mut *rng));
            for (l, stack) in net.levels.iter().enumerate() {
                let dropout_rng: Option<&mut dyn RngCore> =
                    (stack.inter_layer_dropout > 0.0).then_some(&mut *rng);
                loss += bptt_gradients(
                    stack,
                    &inputs[l],
                    &targets[l],
                    loss_width,
                    weight,
                    &mut grad.levels[l],
                    dropout_rng,
                )
                .map_err(|e| Error::NonFinite(format!("sub-series {k}, head {l}: {e}")))?;
            }
        }
        Ok(loss)
    }

    pub fn zero_grads(&self) -> Vec<SubModel> {
        self.nets.iter().map(SubModel::zeros_like).collect()
    }

    /// Runs every head of sub-model `k` one step on a known value and
    /// advances `states`.
    fn step_known(
        &self,
        k: usize,
        base: &SparseInput,
        normalized: f64,
        states: &mut [Vec<CellState>],
        buf: &mut StepBuffers,
    ) {
        let path = self.target_path(normalized);
        for (l, stack) in self.nets[k].levels.iter().enumerate() {
            if l == 0 {
                stack.step(&mut states[l], base, &mut buf.logits, &mut buf.scratch);
            } else {
                self.with_parent(k, base, &path[..l], &mut buf.x);
                stack.step(&mut states[l], &buf.x, &mut buf.logits, &mut buf.scratch);
            }
        }
    }

    /// Runs every head of sub-model `k` one step, choosing the bin path
    /// with `decoder`; returns the normalized value.
    fn step_generate(
        &self,
        k: usize,
        base: &SparseInput,
        states: &mut [Vec<CellState>],
        buf: &mut StepBuffers,
        decoder: &mut Decoder<'_>,
    ) -> f64 {
        let bins = self.config.loss_width();
        let mut choose = |logits: &[f64]| match decoder {
            Decoder::Sample(r) => sample_categorical(&logits[..bins], *r),
            Decoder::Greedy => argmax(&logits[..bins]),
        };
        let mut path = Vec::with_capacity(self.config.num_heads());
        for (l, stack) in self.nets[k].levels.iter().enumerate() {
            if l == 0 {
                stack.step(&mut states[l], base, &mut buf.logits, &mut buf.scratch);
            } else {
                self.with_parent(k, base, &path, &mut buf.x);
                stack.step(&mut states[l], &buf.x, &mut buf.logits, &mut buf.scratch);
            }
            path.push(choose(&buf.logits));
        }
        let u = match decoder {
            Decoder::Sample(r) => r.gen::<f64>(),
            Decoder::Greedy => 0.5,
        };
        match self.flat_binning() {
            Some(fb) => fb.low + (path[0] as f64 + u) * fb.bin_width(),
            None => {
                let (lo, hi) = self.binning.cell_bounds(&path);
                lo + u * (hi - lo)
            }
        }
    }

    /// Generates prediction tracks for `n_rollouts` futures of one
    /// conditioning window. Rollout `r` uses its own stream seeded from
    /// `(seed, r)`. `fixed[r]`, when given, pins prediction positions
    /// (model order) to values instead of generating them.
    pub fn rollouts(
        &self,
        window: &Window,
        n_rollouts: usize,
        seed: u64,
        fixed: Option<&[Vec<Option<f64>>]>,
    ) -> Result<Vec<Vec<f64>>> {
        self.generate(window, n_rollouts, fixed, |r| {
            Box::new(ChaCha8Rng::seed_from_u64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        })
    }

    /// Greedy decoding: argmax bins at each head, cell midpoints as values.
    pub fn greedy_forecast(&self, window: &Window) -> Result<Vec<f64>> {
        let mut rows = self.generate_inner(window, 1, None, &mut |_| None)?;
        Ok(rows.remove(0))
    }

    fn generate<F>(
        &self,
        window: &Window,
        n_rollouts: usize,
        fixed: Option<&[Vec<Option<f64>>]>,
        mut make_rng: F,
    ) -> Result<Vec<Vec<f64>>>
    where
        F: FnMut(usize) -> Box<dyn RngCore>,
    {
        self.generate_inner(window, n_rollouts, fixed, &mut |r| Some(make_rng(r)))
    }

    fn generate_inner(
        &self,
        window: &Window,
        n_rollouts: usize,
        fixed: Option<&[Vec<Option<f64>>]>,
        make_rng: &mut dyn FnMut(usize) -> Option<Box<dyn RngCore>>,
    ) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::InvalidArgument("model has not been trained".into()));
        }
        self.check_shapes()?;
        let (_, n_model) = self.config.model_lengths()?;
        let prep = self.prepare(window, Some(n_model))?;
        let plan = self.plan(prep.context_len, prep.prediction_len)?;
        let cfg = &self.config;
        let k_count = cfg.num_subseries;
        let t_sub = prep.context_len / k_count;
        let mut buf = StepBuffers::default();
        let mut base = SparseInput::new();

        // warm up every sub-model on the conditioning range
        let mut warm: Vec<Vec<Vec<CellState>>> = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let mut states: Vec<Vec<CellState>> =
                self.nets[k].levels.iter().map(StackParams::zero_states).collect();
            for t in 0..t_sub {
                self.base_features(k, t, &plan, &prep, &prep.values, &mut base);
                let pos = original_index(k, t, k_count, cfg.ordering);
                self.step_known(k, &base, prep.scales[k].apply(prep.values[pos]), &mut states, &mut buf);
            }
            warm.push(states);
        }

        // A single look-ahead network must still advance in time order; its
        // generation order only decides which inputs are visible.
        let exec_order: Vec<usize> = if cfg.lookahead_period.is_some() {
            if fixed.is_none() {
                return Err(Error::InvalidArgument(
                    "a look-ahead model needs its low-frequency values pinned".into(),
                ));
            }
            (prep.context_len..prep.context_len + prep.prediction_len).collect()
        } else {
            plan.order.clone()
        };
        let mut out = Vec::with_capacity(n_rollouts);
        for r in 0..n_rollouts {
            let mut rng = make_rng(r);
            let mut states = warm.clone();
            let mut values = prep.values.clone();
            for &pos in &exec_order {
                let (k, t) = cfg.locate(pos);
                self.base_features(k, t, &plan, &prep, &values, &mut base);
                let pinned = fixed
                    .and_then(|f| f.get(r))
                    .and_then(|row| row.get(pos - prep.context_len).copied().flatten());
                let value = match pinned {
                    Some(v) => {
                        self.step_known(k, &base, prep.scales[k].apply(v), &mut states[k], &mut buf);
                        v
                    }
                    None => {
                        let mut decoder = match rng.as_deref_mut() {
                            Some(r) => Decoder::Sample(r),
                            None => Decoder::Greedy,
                        };
                        let z = self.step_generate(k, &base, &mut states[k], &mut buf, &mut decoder);
                        prep.scales[k].invert(z)
                    }
                };
                values[pos] = value;
            }
            out.push(self.untransform_prediction(values[prep.context_len..].to_vec())?);
        }
        Ok(out)
    }

    /// Window positions feeding sub-model `k` at sub-series time `t`, per
    /// value slot; `None` marks a missing input.
    pub fn input_positions(&self, k: usize, t: usize) -> Result<Vec<Option<usize>>> {
        let (c, n) = self.config.model_lengths()?;
        let plan = self.plan(c, n)?;
        plan.refs
            .get(k)
            .and_then(|r| r.get(t))
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no step ({k}, {t})")))
    }

    /// Prediction positions (model order) pinned by the low-to-high constraint.
    pub fn constrained_positions(&self) -> Result<Vec<usize>> {
        let (_, n) = self.config.model_lengths()?;
        Ok((0..n).filter(|&h| self.config.is_constrained(self.config.context_len + h)).collect())
    }
}

#[derive(Default)]
struct StepBuffers {
    logits: Vec<f64>,
    scratch: StepScratch,
    x: SparseInput,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

