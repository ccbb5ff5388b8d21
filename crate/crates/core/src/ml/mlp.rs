//! Fully connected rectifier network trained with Adam on squared error.
//!
//! Labels are standardized with the training split's mean and standard
//! deviation; the network works in that space and [`mlp_forward`] maps its
//! output back to dBm.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, MlError};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Multiplier applied to the step size after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 0.001,
            lr_decay: 0.975,
            batch_size: 64,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<(), MlError> {
        if self.hidden.contains(&0) {
            return Err(MlError::InvalidConfig("hidden"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlError::InvalidConfig("learning_rate"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(MlError::InvalidConfig("lr_decay"));
        }
        if self.batch_size == 0 {
            return Err(MlError::InvalidConfig("batch_size"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(MlError::InvalidConfig("adam"));
        }
        Ok(())
    }
}

/// Affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl MlpModel {
    /// All-zero network with layer sizes `widths` (input first, 1 last) and
    /// an identity label transform.
    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers, label_mean: 0.0, label_std: 1.0 }
    }

    /// He-uniform weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Self {
        let mut m = Self::zeros(widths);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut m.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameter by flat index: per layer, weights then biases.
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = v;
                return;
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                l.bias[idx] = v;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Network output in standardized label units.
    pub fn raw_output(&self, x: &[f32]) -> f64 {
        let mut ws = Workspace::default();
        self.forward(x, &mut ws);
        ws.output()
    }

    fn forward(&self, x: &[f32], ws: &mut Workspace) {
        let n = self.layers.len();
        ws.acts.resize_with(n + 1, Vec::new);
        ws.pre.resize_with(n, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend(x.iter().map(|&v| v as f64));
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            layer.apply(&head[l], &mut ws.pre[l]);
            let next = &mut tail[0];
            next.clear();
            if l + 1 < n {
                next.extend(ws.pre[l].iter().map(|&z| z.max(0.0)));
            } else {
                next.extend_from_slice(&ws.pre[l]);
            }
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), MlError> {
        if got != self.input_dim() {
            return Err(MlError::DimensionMismatch { expected: self.input_dim(), got });
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Workspace {
    /// Layer inputs; `acts[n]` is the network output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn output(&self) -> f64 {
        self.acts.last().and_then(|a| a.first()).copied().unwrap_or(0.0)
    }
}

/// Prediction in dBm.
pub fn mlp_forward(model: &MlpModel, x: &[f32]) -> Result<f64, MlError> {
    model.check_dim(x.len())?;
    Ok(model.raw_output(x) * model.label_std + model.label_mean)
}

/// Borrowed feature rows with their targets.
#[derive(Debug, Clone, Default)]
pub struct Samples<'a> {
    pub x: Vec<&'a [f32]>,
    pub y: Vec<f64>,
}

impl<'a> Samples<'a> {
    pub fn from_dataset(ds: &'a Dataset) -> Self {
        Self {
            x: (0..ds.len()).map(|i| ds.features(i)).collect(),
            y: ds.labels().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn from_rows(rows: &'a [Vec<f32>], y: &[f64]) -> Self {
        Self { x: rows.iter().map(Vec::as_slice).collect(), y: y.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Adds the gradient of `(out - target)^2 / batch` for one sample into
/// `grad`, assuming `ws` holds that sample's forward pass.
fn backprop(model: &MlpModel, ws: &mut Workspace, target: f64, batch: f64, grad: &mut [f64]) {
    let n = model.layers.len();
    ws.delta.clear();
    ws.delta.push(2.0 * (ws.output() - target) / batch);
    let mut offsets = Vec::with_capacity(n);
    let mut off = 0;
    for l in &model.layers {
        offsets.push(off);
        off += l.n_params();
    }
    for l in (0..n).rev() {
        let layer = &model.layers[l];
        let input = &ws.acts[l];
        let g = &mut grad[offsets[l]..offsets[l] + layer.n_params()];
        let (gw, gb) = g.split_at_mut(layer.weights.len());
        for (o, &d) in ws.delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (gwi, &a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                *gwi += d * a;
            }
            gb[o] += d;
        }
        if l == 0 {
            break;
        }
        ws.delta_prev.clear();
        ws.delta_prev.resize(layer.inputs, 0.0);
        for (o, &d) in ws.delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (dp, &w) in ws.delta_prev.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                *dp += w * d;
            }
        }
        for (dp, &z) in ws.delta_prev.iter_mut().zip(&ws.pre[l - 1]) {
            if z <= 0.0 {
                *dp = 0.0;
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
    }
}

fn standardized(model: &MlpModel, y: f64) -> f64 {
    (y - model.label_mean) / model.label_std
}

/// Mean squared error over `batch` in standardized label units, and its
/// gradient with respect to every parameter (flat layout of
/// [`MlpModel::param`]).
pub fn loss_and_gradient(model: &MlpModel, batch: &Samples) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.n_params()];
    let loss = accumulate(model, batch, &(0..batch.len()).collect::<Vec<_>>(), &mut grad, &mut Workspace::default());
    (loss, grad)
}

fn accumulate(model: &MlpModel, data: &Samples, idx: &[usize], grad: &mut [f64], ws: &mut Workspace) -> f64 {
    let b = idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        model.forward(data.x[i], ws);
        let t = standardized(model, data.y[i]);
        let e = ws.output() - t;
        loss += e * e / b;
        backprop(model, ws, t, b, grad);
    }
    loss
}

fn batch_loss(model: &MlpModel, batch: &Samples) -> (f64, Vec<bool>) {
    let mut ws = Workspace::default();
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for (x, &y) in batch.x.iter().zip(&batch.y) {
        model.forward(x, &mut ws);
        let e = ws.output() - standardized(model, y);
        loss += e * e;
        for z in &ws.pre[..ws.pre.len() - 1] {
            pattern.extend(z.iter().map(|&v| v > 0.0));
        }
    }
    (loss / batch.len() as f64, pattern)
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because the probe flipped a rectifier.
    pub skipped: usize,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares backpropagated gradients with central differences on `n_params`
/// randomly chosen parameters (all of them if the network is smaller).
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check_with(model: &MlpModel, batch: &Samples, n_params: usize, seed: u64) -> GradCheck {
    let (_, grad) = loss_and_gradient(model, batch);
    let total = model.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n_params >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng, total, n_params).into_vec()
    };
    let (_, base_pattern) = batch_loss(model, batch);
    let mut probe = model.clone();
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for idx in picks {
        let orig = model.param(idx);
        probe.set_param(idx, orig + GRAD_CHECK_STEP);
        let (lp, pp) = batch_loss(&probe, batch);
        probe.set_param(idx, orig - GRAD_CHECK_STEP);
        let (lm, pm) = batch_loss(&probe, batch);
        probe.set_param(idx, orig);
        if pp != base_pattern || pm != base_pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
        let analytic = grad[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    out
}

/// Maximum relative gradient error over 128 sampled parameters.
pub fn gradient_check(model: &MlpModel, batch: &Samples) -> f64 {
    gradient_check_with(model, batch, 128, 0x6772_6164).max_rel_error
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    /// Mean training loss per epoch (standardized units).
    pub train_loss: Vec<f64>,
    /// Holdout MSE per epoch in dB².
    pub holdout_mse: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

pub fn mse_db(model: &MlpModel, data: &Samples) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut ws = Workspace::default();
    let mut acc = 0.0;
    for (x, &y) in data.x.iter().zip(&data.y) {
        model.forward(x, &mut ws);
        let e = ws.output() * model.label_std + model.label_mean - y;
        acc += e * e;
    }
    acc / data.len() as f64
}

/// Mini-batch Adam on epoch-shuffled batches. Keeps the parameters with
/// the lowest holdout MSE (the last epoch's when there is no holdout set).
pub fn train_mlp(train: &Samples, holdout: &Samples, cfg: &MlpConfig) -> Result<(MlpModel, TrainingReport), MlError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(MlError::EmptyTrainingSet);
    }
    if train.len() < cfg.batch_size {
        return Err(MlError::TooFewSamples { needed: cfg.batch_size, got: train.len() });
    }
    let dim = train.x[0].len();
    if let Some(bad) = train.x.iter().chain(&holdout.x).find(|r| r.len() != dim) {
        return Err(MlError::DimensionMismatch { expected: dim, got: bad.len() });
    }
    let n = train.len() as f64;
    let mean = train.y.iter().sum::<f64>() / n;
    let var = train.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let mut widths = vec![dim];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut model = MlpModel::init(&widths, derive_seed(cfg.seed, 0));
    model.label_mean = mean;
    model.label_std = std;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let p = model.n_params();
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut ws = Workspace::default();
    let mut step = 0i32;
    let mut lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainingReport::default();
    let mut best: Option<(f64, MlpModel)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate(&model, train, chunk, &mut grad, &mut ws);
            if !loss.is_finite() {
                return Err(MlError::Diverged { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64 / n;
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for (((w, g), a), b) in model.params_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                *a = cfg.beta1 * *a + (1.0 - cfg.beta1) * g;
                *b = cfg.beta2 * *b + (1.0 - cfg.beta2) * g * g;
                *w -= lr * (*a / c1) / ((*b / c2).sqrt() + cfg.epsilon);
            }
        }
        report.train_loss.push(epoch_loss);
        if !holdout.is_empty() {
            let h = mse_db(&model, holdout);
            if !h.is_finite() {
                return Err(MlError::Diverged { epoch, loss: h });
            }
            report.holdout_mse.push(h);
            if best.as_ref().is_none_or(|(b, _)| h < *b) {
                best = Some((h, model.clone()));
                report.best_epoch = Some(epoch);
            }
        }
        lr *= cfg.lr_decay;
    }
    match best {
        Some((_, m)) => Ok((m, report)),
        None => {
            report.best_epoch = cfg.epochs.checked_sub(1);
            Ok((model, report))
        }
    }
}
