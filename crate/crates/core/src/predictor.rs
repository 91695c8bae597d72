//! Elman recurrent network trained by truncated backpropagation through time.
//!
//! ```text
//! h_t = tanh(W_hh·h_{t−1} + W_hx·x_t + b_h)
//! y_t = W_yh·h_t + b_y
//! ```
//!
//! Training minimizes mean squared error over every step of each window plus
//! optional L2/L1 penalties on the weight matrices (biases are never
//! penalized). Dropout, when enabled, masks hidden units on the output path
//! during training passes with inverted scaling.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pipeline::{apply_norm, invert_norm, NormParams};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("not enough windows to split into train and validation ({0})")]
    InsufficientData(usize),
    #[error("training diverged at epoch {epoch} (loss {loss}); lower the learning rate")]
    Divergence { epoch: usize, loss: f64 },
    #[error("regime {0:?} has no samples to oversample from")]
    EmptyRegime(Regime),
    #[error("horizon must be at least one step")]
    ZeroSteps,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, PredictorError>;

/// Network parameters. Matrices are stored row-major; the JSON checkpoint is
/// this struct serialized as-is (dimension header followed by flat weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    /// hidden × hidden
    pub w_hh: Vec<f64>,
    /// hidden × input
    pub w_hx: Vec<f64>,
    /// output × hidden
    pub w_yh: Vec<f64>,
    pub b_h: Vec<f64>,
    pub b_y: Vec<f64>,
}

fn matvec_add(out: &mut [f64], m: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += mᵀ·v where m is (v.len() × out.len()).
fn matvec_t_add(out: &mut [f64], m: &[f64], v: &[f64]) {
    let cols = out.len();
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

fn outer_add(m: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        let row = &mut m[r * cols..(r + 1) * cols];
        for (x, bc) in row.iter_mut().zip(b) {
            *x += ar * bc;
        }
    }
}

impl RnnModel {
    pub fn zeros(input_size: usize, hidden_size: usize, output_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            output_size,
            w_hh: vec![0.0; hidden_size * hidden_size],
            w_hx: vec![0.0; hidden_size * input_size],
            w_yh: vec![0.0; output_size * hidden_size],
            b_h: vec![0.0; hidden_size],
            b_y: vec![0.0; output_size],
        }
    }

    /// Uniform initialization in `[−0.08, 0.08]` from `seed`.
    pub fn random(input_size: usize, hidden_size: usize, output_size: usize, seed: u64) -> Self {
        let mut m = Self::zeros(input_size, hidden_size, output_size);
        let mut r = rng::stream(seed, "rnn-init");
        for p in m.params_mut() {
            *p = r.random_range(-0.08..=0.08);
        }
        m
    }

    pub fn param_count(&self) -> usize {
        self.w_hh.len() + self.w_hx.len() + self.w_yh.len() + self.b_h.len() + self.b_y.len()
    }

    /// All parameters in checkpoint order: W_hh, W_hx, W_yh, b_h, b_y.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w_hh
            .iter()
            .chain(&self.w_hx)
            .chain(&self.w_yh)
            .chain(&self.b_h)
            .chain(&self.b_y)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_hh
            .iter_mut()
            .chain(self.w_hx.iter_mut())
            .chain(self.w_yh.iter_mut())
            .chain(self.b_h.iter_mut())
            .chain(self.b_y.iter_mut())
    }

    /// Penalized parameters (weight matrices only).
    pub fn weights(&self) -> impl Iterator<Item = &f64> {
        self.w_hh.iter().chain(&self.w_hx).chain(&self.w_yh)
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.weights().map(|w| w * w).sum()
    }

    pub fn check(&self) -> Result<()> {
        let (i, h, o) = (self.input_size, self.hidden_size, self.output_size);
        if h == 0 || i == 0 || o == 0 {
            return Err(PredictorError::Dimension("sizes must be positive".into()));
        }
        let shapes = [
            ("w_hh", self.w_hh.len(), h * h),
            ("w_hx", self.w_hx.len(), h * i),
            ("w_yh", self.w_yh.len(), o * h),
            ("b_h", self.b_h.len(), h),
            ("b_y", self.b_y.len(), o),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(PredictorError::Dimension(format!(
                    "{name} has {got} entries, expected {want}"
                )));
            }
        }
        if !self.params().all(|p| p.is_finite()) {
            return Err(PredictorError::Dimension("non-finite weight".into()));
        }
        Ok(())
    }

    /// One recurrence step returning `(h_t, y_t)`.
    pub fn step(&self, h_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a = self.b_h.clone();
        matvec_add(&mut a, &self.w_hh, h_prev);
        matvec_add(&mut a, &self.w_hx, x);
        let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
        let mut y = self.b_y.clone();
        matvec_add(&mut y, &self.w_yh, &h);
        (h, y)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.check()?;
        Ok(m)
    }
}

/// Runs the network over `window` from `h0`, returning every output and the
/// final hidden state.
pub fn forward(m: &RnnModel, window: &[Vec<f64>], h0: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if h0.len() != m.hidden_size {
        return Err(PredictorError::Dimension(format!(
            "h0 has length {}, hidden size is {}",
            h0.len(),
            m.hidden_size
        )));
    }
    let mut h = h0.to_vec();
    let mut outputs = Vec::with_capacity(window.len());
    for (t, x) in window.iter().enumerate() {
        if x.len() != m.input_size {
            return Err(PredictorError::Dimension(format!(
                "input {t} has length {}, input size is {}",
                x.len(),
                m.input_size
            )));
        }
        let (h_next, y) = m.step(&h, x);
        outputs.push(y);
        h = h_next;
    }
    Ok((outputs, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InBand,
    Above,
    Below,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::InBand, Regime::Above, Regime::Below];

    fn index(self) -> usize {
        self as usize
    }
}

/// One training sequence: `targets[t]` is the label for `inputs[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    /// Ticks between an input and its target.
    pub horizon: usize,
}

impl WindowedDataset {
    /// Cuts a normalized feature track into windows of `window_len` inputs,
    /// with targets taken `horizon` ticks ahead from `target_track`.
    pub fn from_tracks(
        features: &[Vec<f64>],
        target_track: &[Vec<f64>],
        window_len: usize,
        stride: usize,
        horizon: usize,
    ) -> Result<Self> {
        if features.len() != target_track.len() {
            return Err(PredictorError::Dimension(
                "feature and target tracks differ in length".into(),
            ));
        }
        if window_len == 0 || stride == 0 || horizon == 0 {
            return Err(PredictorError::Config(
                "window_len, stride and horizon must be positive",
            ));
        }
        let mut windows = Vec::new();
        let mut start = 0;
        while start + window_len + horizon <= features.len() {
            windows.push(Window {
                inputs: features[start..start + window_len].to_vec(),
                targets: target_track[start + horizon..start + window_len + horizon].to_vec(),
                regime: Regime::InBand,
            });
            start += stride;
        }
        Ok(Self { windows, horizon })
    }

    /// Labels each window by where its final target on `output_index` falls
    /// relative to `setpoint ± half_band` (all in target units).
    pub fn label_regimes(&mut self, output_index: usize, setpoint: f64, half_band: f64) {
        for w in &mut self.windows {
            let v = w.targets.last().map_or(setpoint, |t| t[output_index]);
            w.regime = if v > setpoint + half_band {
                Regime::Above
            } else if v < setpoint - half_band {
                Regime::Below
            } else {
                Regime::InBand
            };
        }
    }

    pub fn regime_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for w in &self.windows {
            c[w.regime.index()] += 1;
        }
        c
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    #[default]
    None,
    Oversample,
    Undersample,
}

/// Balances regime counts among the regimes present in `data`.
///
/// Oversampling appends cyclic duplicates of each minority regime's windows
/// until every present regime matches the majority count. Undersampling
/// keeps a random subset of each regime at the minority count, preserving
/// chronological order.
pub fn rebalance<R: Rng + ?Sized>(
    data: &WindowedDataset,
    policy: ResamplePolicy,
    rng: &mut R,
) -> Result<WindowedDataset> {
    let counts = data.regime_counts();
    let present: Vec<Regime> = Regime::ALL
        .into_iter()
        .filter(|r| counts[r.index()] > 0)
        .collect();
    match policy {
        ResamplePolicy::None => Ok(data.clone()),
        ResamplePolicy::Oversample => {
            if present.is_empty() {
                return Err(PredictorError::EmptyRegime(Regime::InBand));
            }
            let target = present.iter().map(|r| counts[r.index()]).max().unwrap_or(0);
            let mut windows = data.windows.clone();
            for r in present {
                let members: Vec<&Window> = data.windows.iter().filter(|w| w.regime == r).collect();
                for i in 0..target - members.len() {
                    windows.push(members[i % members.len()].clone());
                }
            }
            Ok(WindowedDataset {
                windows,
                horizon: data.horizon,
            })
        }
        ResamplePolicy::Undersample => {
            let target = present.iter().map(|r| counts[r.index()]).min().unwrap_or(0);
            let mut keep = vec![false; data.windows.len()];
            for r in present {
                let members: Vec<usize> = (0..data.windows.len())
                    .filter(|&i| data.windows[i].regime == r)
                    .collect();
                for k in index::sample(rng, members.len(), target) {
                    keep[members[k]] = true;
                }
            }
            let windows = data
                .windows
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(w, _)| w.clone())
                .collect();
            Ok(WindowedDataset {
                windows,
                horizon: data.horizon,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub bptt_window: usize,
    pub l2_lambda: f64,
    pub l1_lambda: f64,
    pub dropout_rate: f64,
    /// Global-norm gradient clip; `inf` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Loss weights for in-band, above and below windows.
    pub class_weights: [f64; 3],
    pub resample: ResamplePolicy,
    pub batch_size: usize,
    /// Epochs without validation improvement before the rate is halved.
    pub plateau_patience: usize,
    /// Loss growth over the untrained loss treated as divergence.
    pub divergence_factor: f64,
    /// Keeps W_hh fixed at its initial value.
    pub freeze_recurrent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 100,
            bptt_window: 12,
            l2_lambda: 0.0,
            l1_lambda: 0.0,
            dropout_rate: 0.0,
            grad_clip: 5.0,
            seed: 0,
            class_weights: [1.0; 3],
            resample: ResamplePolicy::None,
            batch_size: 16,
            plateau_patience: 5,
            divergence_factor: 1e4,
            freeze_recurrent: false,
        }
    }
}

impl TrainConfig {
    pub fn first_invalid(&self) -> Option<&'static str> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Some("learning_rate");
        }
        if self.bptt_window < 1 {
            return Some("bptt_window");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Some("l2_lambda");
        }
        if !(self.l1_lambda.is_finite() && self.l1_lambda >= 0.0) {
            return Some("l1_lambda");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Some("dropout_rate");
        }
        if !(self.grad_clip > 0.0) {
            return Some("grad_clip");
        }
        if !self
            .class_weights
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            return Some("class_weights");
        }
        if self.batch_size < 1 {
            return Some("batch_size");
        }
        if !(self.divergence_factor > 1.0) {
            return Some("divergence_factor");
        }
        None
    }
}

fn regularizer(m: &RnnModel, cfg: &TrainConfig) -> f64 {
    let mut r = 0.0;
    if cfg.l2_lambda > 0.0 {
        r += cfg.l2_lambda * m.weight_sq_norm();
    }
    if cfg.l1_lambda > 0.0 {
        r += cfg.l1_lambda * m.weights().map(|w| w.abs()).sum::<f64>();
    }
    r
}

/// Unweighted, unregularized MSE with dropout off.
pub fn mse(m: &RnnModel, windows: &[Window]) -> Result<f64> {
    let h0 = vec![0.0; m.hidden_size];
    let mut se = 0.0;
    let mut n = 0usize;
    for w in windows {
        let (ys, _) = forward(m, &w.inputs, &h0)?;
        for (y, t) in ys.iter().zip(&w.targets) {
            if t.len() != m.output_size {
                return Err(PredictorError::Dimension(
                    "target length differs from output size".into(),
                ));
            }
            se += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += y.len();
        }
    }
    if n == 0 {
        return Err(PredictorError::EmptyBatch);
    }
    Ok(se / n as f64)
}

/// Loss and gradient over `batch`.
///
/// `rng` draws dropout masks (one per window) when `cfg.dropout_rate > 0`.
/// Gradients flow back at most `cfg.bptt_window` steps; the returned
/// gradient is clipped to `cfg.grad_clip` by global norm.
pub fn loss_and_grad<R: Rng + ?Sized>(
    m: &RnnModel,
    batch: &[Window],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, RnnModel)> {
    if batch.is_empty() {
        return Err(PredictorError::EmptyBatch);
    }
    let (hs, os) = (m.hidden_size, m.output_size);
    let total: usize = batch.iter().map(|w| w.inputs.len() * os).sum();
    if total == 0 {
        return Err(PredictorError::EmptyBatch);
    }
    let norm = 1.0 / total as f64;
    let mut grad = RnnModel::zeros(m.input_size, hs, os);
    let mut data_loss = 0.0;
    let keep = 1.0 - cfg.dropout_rate;

    for w in batch {
        if w.targets.len() != w.inputs.len() {
            return Err(PredictorError::Dimension(
                "window inputs and targets differ in length".into(),
            ));
        }
        let weight = cfg.class_weights[w.regime.index()];
        let mask: Vec<f64> = if cfg.dropout_rate > 0.0 {
            (0..hs)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![1.0; hs]
        };

        let steps = w.inputs.len();
        let mut h_all: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        h_all.push(vec![0.0; hs]);
        let mut dys: Vec<Vec<f64>> = Vec::with_capacity(steps);
        for (t, x) in w.inputs.iter().enumerate() {
            if x.len() != m.input_size {
                return Err(PredictorError::Dimension(format!(
                    "input {t} has length {}",
                    x.len()
                )));
            }
            let mut a = m.b_h.clone();
            matvec_add(&mut a, &m.w_hh, &h_all[t]);
            matvec_add(&mut a, &m.w_hx, x);
            let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            let hd: Vec<f64> = h.iter().zip(&mask).map(|(a, b)| a * b).collect();
            let mut y = m.b_y.clone();
            matvec_add(&mut y, &m.w_yh, &hd);
            let target = &w.targets[t];
            if target.len() != os {
                return Err(PredictorError::Dimension(
                    "target length differs from output size".into(),
                ));
            }
            let dy: Vec<f64> = y
                .iter()
                .zip(target)
                .map(|(yv, tv)| {
                    let e = yv - tv;
                    data_loss += weight * e * e * norm;
                    2.0 * weight * e * norm
                })
                .collect();
            dys.push(dy);
            h_all.push(h);
        }

        let mut dh_next = vec![0.0; hs];
        for t in (0..steps).rev() {
            let h = &h_all[t + 1];
            let dy = &dys[t];
            let hd: Vec<f64> = h.iter().zip(&mask).map(|(a, b)| a * b).collect();
            outer_add(&mut grad.w_yh, dy, &hd);
            for (g, d) in grad.b_y.iter_mut().zip(dy) {
                *g += d;
            }
            let mut dh = vec![0.0; hs];
            matvec_t_add(&mut dh, &m.w_yh, dy);
            for ((d, mk), n) in dh.iter_mut().zip(&mask).zip(&dh_next) {
                *d = *d * mk + n;
            }
            let da: Vec<f64> = dh
                .iter()
                .zip(h)
                .map(|(d, hv)| d * (1.0 - hv * hv))
                .collect();
            outer_add(&mut grad.w_hh, &da, &h_all[t]);
            outer_add(&mut grad.w_hx, &da, &w.inputs[t]);
            for (g, d) in grad.b_h.iter_mut().zip(&da) {
                *g += d;
            }
            // truncation boundary: no gradient into the previous chunk
            if t % cfg.bptt_window == 0 {
                dh_next.iter_mut().for_each(|v| *v = 0.0);
            } else {
                dh_next = vec![0.0; hs];
                matvec_t_add(&mut dh_next, &m.w_hh, &da);
            }
        }
    }

    let loss = data_loss + regularizer(m, cfg);
    if cfg.l2_lambda > 0.0 || cfg.l1_lambda > 0.0 {
        let pairs = grad
            .w_hh
            .iter_mut()
            .chain(grad.w_hx.iter_mut())
            .chain(grad.w_yh.iter_mut())
            .zip(m.weights());
        for (g, w) in pairs {
            *g += 2.0 * cfg.l2_lambda * w;
            if *w != 0.0 {
                *g += cfg.l1_lambda * w.signum();
            }
        }
    }
    if cfg.freeze_recurrent {
        grad.w_hh.iter_mut().for_each(|g| *g = 0.0);
    }

    let gnorm = grad.params().map(|g| g * g).sum::<f64>().sqrt();
    if gnorm > cfg.grad_clip {
        let s = cfg.grad_clip / gnorm;
        grad.params_mut().for_each(|g| *g *= s);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
    /// Validation MSE of the model passed in, before any update.
    pub initial_validation: f64,
}

impl LossCurve {
    pub fn final_validation(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_validation, |e| e.validation)
    }
}

/// Chronological 80/20 train/validation split point.
pub fn split_index(n: usize) -> usize {
    n - (n / 5).max(1)
}

/// Mini-batch gradient descent with step-decay learning rate.
///
/// Windows are split chronologically 80/20. Batches are visited in order.
/// The learning rate halves whenever validation loss fails to improve for
/// `plateau_patience` epochs.
pub fn train(
    m: &RnnModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(RnnModel, LossCurve)> {
    if let Some(field) = cfg.first_invalid() {
        return Err(PredictorError::Config(field));
    }
    m.check()?;
    if data.len() < 2 {
        return Err(PredictorError::InsufficientData(data.len()));
    }
    let cut = split_index(data.len());
    let valid = &data.windows[cut..];
    let mut rng: ChaCha8Rng = rng::stream(cfg.seed, "rnn-train");
    let train_set = rebalance(
        &WindowedDataset {
            windows: data.windows[..cut].to_vec(),
            horizon: data.horizon,
        },
        cfg.resample,
        &mut rng,
    )?;

    let initial_validation = mse(m, valid)?;
    let mut curve = LossCurve {
        epochs: Vec::new(),
        initial_validation,
    };
    if cfg.epochs == 0 {
        return Ok((m.clone(), curve));
    }
    let initial_train = mse(m, &train_set.windows)? + regularizer(m, cfg);
    let ceiling = cfg.divergence_factor * initial_train.max(1e-12);

    let mut model = m.clone();
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        for batch in train_set.windows.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_grad(&model, batch, cfg, &mut rng)?;
            if !loss.is_finite() || loss > ceiling {
                return Err(PredictorError::Divergence { epoch, loss });
            }
            for (p, g) in model.params_mut().zip(grad.params()) {
                *p -= lr * g;
            }
        }
        let train_loss = mse(&model, &train_set.windows)? + regularizer(&model, cfg);
        let validation = mse(&model, valid)?;
        if !train_loss.is_finite() || !validation.is_finite() || train_loss > ceiling {
            return Err(PredictorError::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        curve.epochs.push(EpochLoss {
            epoch,
            train: train_loss,
            validation,
            learning_rate: lr,
        });
        if validation < best {
            best = validation;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    Ok((model, curve))
}

/// Maps network outputs back onto the inputs they feed during rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Input slot receiving output `k`.
    pub feedback_inputs: Vec<usize>,
    /// Normalization of output `k` (targets).
    pub output_norms: Vec<NormParams>,
    /// Normalization of input slot `feedback_inputs[k]`.
    pub input_norms: Vec<NormParams>,
}

impl FeatureLayout {
    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.output_norms)
            .map(|(v, p)| invert_norm(*v, p))
            .collect()
    }

    /// Next input vector: `prev` with fed-back slots replaced by `predicted`
    /// (physical units) re-normalized.
    pub fn feed_back(&self, prev: &[f64], predicted: &[f64]) -> Vec<f64> {
        let mut next = prev.to_vec();
        for ((slot, p), v) in self
            .feedback_inputs
            .iter()
            .zip(&self.input_norms)
            .zip(predicted)
        {
            next[*slot] = apply_norm(*v, p);
        }
        next
    }
}

/// Closed-loop rollout of `steps` predictions in physical units.
///
/// The network first consumes `recent` (normalized inputs); each prediction
/// is then fed back as the next input's environmental features while every
/// other input feature is held at its last value.
pub fn predict_horizon(
    m: &RnnModel,
    recent: &[Vec<f64>],
    steps: usize,
    layout: &FeatureLayout,
) -> Result<Vec<Vec<f64>>> {
    if steps < 1 {
        return Err(PredictorError::ZeroSteps);
    }
    if recent.is_empty() {
        return Err(PredictorError::EmptyBatch);
    }
    if layout.feedback_inputs.len() != m.output_size
        || layout.output_norms.len() != m.output_size
        || layout.input_norms.len() != m.output_size
        || layout.feedback_inputs.iter().any(|&i| i >= m.input_size)
    {
        return Err(PredictorError::Dimension(
            "feature layout does not match model".into(),
        ));
    }
    let (ys, mut h) = forward(m, recent, &vec![0.0; m.hidden_size])?;
    let mut pred = layout.denormalize(ys.last().expect("recent is non-empty"));
    let mut input = recent.last().expect("recent is non-empty").clone();
    let mut out = vec![pred.clone()];
    for _ in 1..steps {
        input = layout.feed_back(&input, &pred);
        let (h_next, y) = m.step(&h, &input);
        h = h_next;
        pred = layout.denormalize(&y);
        out.push(pred.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::NormKind;

    fn no_clip() -> TrainConfig {
        TrainConfig {
            grad_clip: f64::INFINITY,
            ..TrainConfig::default()
        }
    }

    fn scalar_model() -> RnnModel {
        let mut m = RnnModel::zeros(1, 1, 1);
        m.w_hx = vec![1.0];
        m.w_yh = vec![1.0];
        m
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = RnnModel::zeros(3, 4, 2);
        let window = vec![vec![1.0, -2.0, 0.5]; 5];
        let (ys, h) = forward(&m, &window, &[0.0; 4]).unwrap();
        assert_eq!(ys.len(), 5);
        assert!(ys.iter().flatten().all(|v| *v == 0.0));
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_hand_evaluation() {
        let (ys, h) = forward(&scalar_model(), &[vec![0.5]], &[0.0]).unwrap();
        assert!((h[0] - 0.462117157).abs() < 1e-9);
        assert_eq!(ys[0][0], h[0]);
        assert_eq!(h[0], 0.5f64.tanh());
    }

    #[test]
    fn forward_is_pure_and_checks_dimensions() {
        let m = RnnModel::random(2, 3, 1, 11);
        let w = vec![vec![0.1, 0.2], vec![0.3, -0.4]];
        assert_eq!(
            forward(&m, &w, &[0.0; 3]).unwrap(),
            forward(&m, &w, &[0.0; 3]).unwrap()
        );
        assert!(matches!(
            forward(&m, &w, &[0.0; 2]),
            Err(PredictorError::Dimension(_))
        ));
        assert!(matches!(
            forward(&m, &[vec![1.0]], &[0.0; 3]),
            Err(PredictorError::Dimension(_))
        ));
    }

    #[test]
    fn random_init_is_bounded_and_seeded() {
        let a = RnnModel::random(3, 5, 2, 1);
        assert!(a.params().all(|p| p.abs() <= 0.08));
        assert_eq!(a, RnnModel::random(3, 5, 2, 1));
        assert_ne!(a, RnnModel::random(3, 5, 2, 2));
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let m = RnnModel::random(2, 3, 2, 4);
        let inputs = vec![vec![0.3, -0.1], vec![0.0, 0.9], vec![0.5, 0.5]];
        let (targets, _) = forward(&m, &inputs, &[0.0; 3]).unwrap();
        let batch = [Window {
            inputs,
            targets,
            regime: Regime::InBand,
        }];
        let (loss, grad) = loss_and_grad(&m, &batch, &no_clip(), &mut rng::stream(0, "t")).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.params().all(|g| *g == 0.0));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = RnnModel::random(1, 1, 1, 0);
        assert!(matches!(
            loss_and_grad(&m, &[], &no_clip(), &mut rng::stream(0, "t")),
            Err(PredictorError::EmptyBatch)
        ));
    }

    fn toy_batch(seed: u64) -> Vec<Window> {
        let mut r = rng::stream(seed, "toy");
        (0..3)
            .map(|_| Window {
                inputs: (0..4)
                    .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
                    .collect(),
                targets: (0..4).map(|_| vec![r.random_range(-1.0..1.0)]).collect(),
                regime: Regime::InBand,
            })
            .collect()
    }

    #[test]
    fn dropout_changes_loss() {
        let m = RnnModel::random(2, 4, 1, 3);
        let batch = toy_batch(1);
        let cfg0 = no_clip();
        let cfg5 = TrainConfig {
            dropout_rate: 0.5,
            ..no_clip()
        };
        let (l0, _) = loss_and_grad(&m, &batch, &cfg0, &mut rng::stream(9, "d")).unwrap();
        let (l5, _) = loss_and_grad(&m, &batch, &cfg5, &mut rng::stream(9, "d")).unwrap();
        assert!(l0.is_finite() && l5.is_finite());
        assert_ne!(l0, l5);
    }

    #[test]
    fn gradient_is_clipped_to_global_norm() {
        let m = RnnModel::random(2, 4, 1, 3);
        let cfg = TrainConfig {
            grad_clip: 1e-3,
            ..TrainConfig::default()
        };
        let (_, g) = loss_and_grad(&m, &toy_batch(2), &cfg, &mut rng::stream(0, "c")).unwrap();
        let n = g.params().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn truncation_cuts_gradient_to_early_steps() {
        // with a window of 1 the recurrent weights never see a non-zero h_{t-1}
        let m = RnnModel::random(2, 3, 1, 8);
        let cfg = TrainConfig {
            bptt_window: 1,
            ..no_clip()
        };
        let (_, g) = loss_and_grad(&m, &toy_batch(3), &cfg, &mut rng::stream(0, "c")).unwrap();
        let (_, full) =
            loss_and_grad(&m, &toy_batch(3), &no_clip(), &mut rng::stream(0, "c")).unwrap();
        assert_ne!(g.w_hx, full.w_hx);
    }

    fn sine_dataset(n: usize) -> WindowedDataset {
        let track: Vec<Vec<f64>> = (0..n)
            .map(|t| vec![0.5 + 0.4 * (2.0 * std::f64::consts::PI * t as f64 / 48.0).sin()])
            .collect();
        WindowedDataset::from_tracks(&track, &track, 12, 4, 1).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = RnnModel::random(1, 4, 1, 5);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, curve) = train(&m, &sine_dataset(100), &cfg).unwrap();
        assert_eq!(out, m);
        assert!(curve.epochs.is_empty());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let m = RnnModel::random(1, 8, 1, 5);
        let cfg = TrainConfig {
            learning_rate: 1e3,
            epochs: 20,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&m, &sine_dataset(200), &cfg),
            Err(PredictorError::Divergence { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let m = RnnModel::random(1, 8, 1, 5);
        let cfg = TrainConfig {
            epochs: 40,
            seed: 3,
            dropout_rate: 0.1,
            ..TrainConfig::default()
        };
        let data = sine_dataset(300);
        let (a, ca) = train(&m, &data, &cfg).unwrap();
        let (b, cb) = train(&m, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca.final_validation() < ca.initial_validation);
    }

    #[test]
    fn plateau_halves_learning_rate() {
        let m = RnnModel::random(1, 2, 1, 5);
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.5,
            plateau_patience: 2,
            ..TrainConfig::default()
        };
        let (_, curve) = train(&m, &sine_dataset(200), &cfg).unwrap();
        let last = curve.epochs.last().unwrap().learning_rate;
        assert!(last < 0.5);
        // every rate on the curve is 0.5 / 2^k
        for e in &curve.epochs {
            let k = (0.5 / e.learning_rate).log2();
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_shrinks_weights_on_frozen_recurrence() {
        let mut m = RnnModel::random(1, 4, 1, 7);
        m.w_hh.iter_mut().for_each(|w| *w = 0.0);
        let data = sine_dataset(200);
        let base = TrainConfig {
            epochs: 1,
            freeze_recurrent: true,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let reg = TrainConfig {
            l2_lambda: 0.05,
            ..base.clone()
        };
        let (mut plain, mut shrunk) = (m.clone(), m.clone());
        for _ in 0..15 {
            plain = train(&plain, &data, &base).unwrap().0;
            shrunk = train(&shrunk, &data, &reg).unwrap().0;
            assert!(shrunk.weight_sq_norm() <= plain.weight_sq_norm());
            assert!(plain.w_hh.iter().chain(&shrunk.w_hh).all(|w| *w == 0.0));
        }
    }

    #[test]
    fn rebalance_policies() {
        let mk = |r: Regime, v: f64| Window {
            inputs: vec![vec![v]],
            targets: vec![vec![v]],
            regime: r,
        };
        let balanced = WindowedDataset {
            windows: (0..6)
                .map(|i| {
                    mk(
                        if i % 2 == 0 {
                            Regime::InBand
                        } else {
                            Regime::Above
                        },
                        i as f64,
                    )
                })
                .collect(),
            horizon: 1,
        };
        for p in [
            ResamplePolicy::None,
            ResamplePolicy::Oversample,
            ResamplePolicy::Undersample,
        ] {
            let out = rebalance(&balanced, p, &mut rng::stream(0, "r")).unwrap();
            assert_eq!(out.regime_counts(), balanced.regime_counts());
        }

        let skewed = WindowedDataset {
            windows: (0..100)
                .map(|i| {
                    mk(
                        if i < 90 {
                            Regime::InBand
                        } else {
                            Regime::Below
                        },
                        i as f64,
                    )
                })
                .collect(),
            horizon: 1,
        };
        let over = rebalance(
            &skewed,
            ResamplePolicy::Oversample,
            &mut rng::stream(0, "r"),
        )
        .unwrap();
        assert_eq!(over.regime_counts(), [90, 0, 90]);
        let under_a = rebalance(
            &skewed,
            ResamplePolicy::Undersample,
            &mut rng::stream(4, "r"),
        )
        .unwrap();
        let under_b = rebalance(
            &skewed,
            ResamplePolicy::Undersample,
            &mut rng::stream(4, "r"),
        )
        .unwrap();
        assert_eq!(under_a.regime_counts(), [10, 0, 10]);
        assert_eq!(under_a, under_b);

        let empty = WindowedDataset {
            windows: vec![],
            horizon: 1,
        };
        assert!(matches!(
            rebalance(&empty, ResamplePolicy::Oversample, &mut rng::stream(0, "r")),
            Err(PredictorError::EmptyRegime(_))
        ));
    }

    #[test]
    fn regime_labels_follow_band() {
        let track: Vec<Vec<f64>> = [0.1, 0.5, 0.9, 0.5].iter().map(|v| vec![*v]).collect();
        let mut d = WindowedDataset::from_tracks(&track, &track, 1, 1, 1).unwrap();
        d.label_regimes(0, 0.5, 0.1);
        let regimes: Vec<_> = d.windows.iter().map(|w| w.regime).collect();
        assert_eq!(regimes, [Regime::InBand, Regime::Above, Regime::InBand]);
    }

    fn unit_layout() -> FeatureLayout {
        let p = NormParams::new(NormKind::Minmax, 0.0, 1.0).unwrap();
        FeatureLayout {
            feedback_inputs: vec![0],
            output_norms: vec![p],
            input_norms: vec![p],
        }
    }

    #[test]
    fn single_step_rollout_matches_forward() {
        let m = RnnModel::random(2, 3, 1, 2);
        let p = NormParams::new(NormKind::Minmax, 10.0, 30.0).unwrap();
        let layout = FeatureLayout {
            feedback_inputs: vec![0],
            output_norms: vec![p],
            input_norms: vec![p],
        };
        let recent = vec![vec![0.2, 1.0], vec![0.3, 0.0]];
        let pred = predict_horizon(&m, &recent, 1, &layout).unwrap();
        let (ys, _) = forward(&m, &recent, &[0.0; 3]).unwrap();
        assert_eq!(pred, vec![vec![invert_norm(ys[1][0], &p)]]);
        assert!(matches!(
            predict_horizon(&m, &recent, 0, &layout),
            Err(PredictorError::ZeroSteps)
        ));
    }

    #[test]
    fn constant_equilibrium_rollout_is_constant() {
        // y = b_y regardless of input: every prediction equals the bias
        let mut m = RnnModel::zeros(1, 2, 1);
        m.b_y = vec![0.25];
        let pred = predict_horizon(&m, &[vec![0.25]], 5, &unit_layout()).unwrap();
        assert!(pred.iter().all(|p| p[0] == 0.25));
    }

    #[test]
    fn three_step_rollout_matches_manual_iteration() {
        let mut m = scalar_model();
        m.w_hh = vec![0.5];
        m.w_hx = vec![0.8];
        m.w_yh = vec![1.5];
        m.b_h = vec![0.1];
        m.b_y = vec![-0.2];
        let pred = predict_horizon(&m, &[vec![0.4]], 3, &unit_layout()).unwrap();
        let mut h = 0.0f64;
        let mut x = 0.4;
        let mut manual = vec![];
        for _ in 0..3 {
            h = (0.5 * h + 0.8 * x + 0.1).tanh();
            let y = 1.5 * h - 0.2;
            manual.push(y);
            x = y;
        }
        for (p, e) in pred.iter().zip(&manual) {
            assert!((p[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = RnnModel::random(3, 4, 2, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save_json(&path).unwrap();
        assert_eq!(RnnModel::load_json(&path).unwrap(), m);

        std::fs::write(&path, r#"{"input_size":1,"hidden_size":1,"output_size":1,"w_hh":[],"w_hx":[0],"w_yh":[0],"b_h":[0],"b_y":[0]}"#).unwrap();
        assert!(matches!(
            RnnModel::load_json(&path),
            Err(PredictorError::Dimension(_))
        ));
    }
}
