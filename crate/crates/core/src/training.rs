//! Loss, optimizer and the mini-batch loop.

use std::fmt;

use crate::data::DatasetTable;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, LuNetModel};
use crate::nn::{LayerParams, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("one_hot of an empty label vector".into()));
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

fn check_pair(probs: &Tensor, targets: &Tensor) -> Result<[usize; 2]> {
    let dims = probs.dims2("cross_entropy")?;
    if probs.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("probs {:?}, labels {:?}", probs.shape(), targets.shape()),
        });
    }
    Ok(dims)
}

/// Mean over the batch of `-sum(y * ln(max(p, 1e-12)))`.
pub fn cross_entropy_loss(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    let [batch, classes] = check_pair(probs, targets)?;
    if !probs.all_finite() {
        return Err(Error::NonFinite("class probabilities".into()));
    }
    let mut total = 0.0;
    for (i, (p, y)) in probs.data().chunks_exact(classes).zip(targets.data().chunks_exact(classes)).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probability row {i} sums to {sum}")));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
        }
        total -= p.iter().zip(y).map(|(p, y)| y * p.clamp(LOG_FLOOR, 1.0).ln()).sum::<f64>();
    }
    Ok(total / batch as f64)
}

/// Gradient of the mean cross-entropy w.r.t. the logits feeding a softmax:
/// `(p - y) / batch`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let [batch, _] = check_pair(probs, targets)?;
    let data = probs.data().iter().zip(targets.data()).map(|(p, y)| (p - y) / batch as f64).collect();
    Tensor::from_vec(probs.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, rho: 0.9, epsilon: 1e-7 }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho {} not in (0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// RMSprop with one squared-gradient accumulator per parameter element.
/// Accumulators are created (at zero) on first use.
#[derive(Debug, Clone)]
pub struct RmsProp {
    config: RmsPropConfig,
    accumulators: Vec<Vec<Vec<f64>>>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, accumulators: Vec::new() })
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    /// Applies one update to every parameter set, in order, then zeroes the
    /// gradients. The same sets must be passed in the same order every step.
    pub fn step(&mut self, sets: &mut [&mut LayerParams]) {
        let RmsPropConfig { learning_rate: lr, rho, epsilon } = self.config;
        if self.accumulators.len() < sets.len() {
            self.accumulators.resize_with(sets.len(), Vec::new);
        }
        for (set, accs) in sets.iter_mut().zip(&mut self.accumulators) {
            if accs.len() < set.len() {
                accs.extend(set.iter().skip(accs.len()).map(|p| vec![0.0; p.value.len()]));
            }
            for (p, acc) in set.entries_mut().iter_mut().zip(accs.iter_mut()) {
                let grad = p.grad.data().to_vec();
                for ((w, g), a) in p.value.data_mut().iter_mut().zip(&grad).zip(acc.iter_mut()) {
                    *a = rho * *a + (1.0 - rho) * g * g;
                    *w -= lr * g / (a.sqrt() + epsilon);
                }
            }
            set.zero_grad();
        }
    }

    pub fn step_model(&mut self, model: &mut LuNetModel) {
        let mut sets: Vec<&mut LayerParams> = model.layers_mut().iter_mut().map(|l| l.params_mut()).collect();
        self.step(&mut sets);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    /// Batch normalization needs two rows per batch, so `batch_size >= 2`.
    pub fn validate(&self, train_rows: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.batch_size > train_rows {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the {train_rows} training rows",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{\"epoch\":{},\"mean_loss\":{:.6},\"train_accuracy\":{:.4}}}",
            self.epoch, self.mean_loss, self.train_accuracy
        )
    }
}

/// Splits `order` into batches of `size`; a final batch of one row joins the
/// previous batch.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// One pass over `rows` of `table` in train mode. Rows are shuffled with
/// `Rng::new(tc.seed + epoch)` when `tc.shuffle` is set.
pub fn train_epoch(
    model: &mut LuNetModel,
    table: &DatasetTable,
    rows: &[usize],
    tc: &TrainConfig,
    optimizer: &mut RmsProp,
    epoch: usize,
) -> Result<EpochMetrics> {
    tc.validate(rows.len())?;
    if table.width() != model.spec().input_features {
        return Err(Error::WidthMismatch { expected: model.spec().input_features, found: table.width() });
    }
    let mut order = rows.to_vec();
    if tc.shuffle {
        Rng::new(tc.seed.wrapping_add(epoch as u64)).shuffle(&mut order);
    }
    model.set_mode(Mode::Train);
    let classes = model.spec().num_classes;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for batch in batches(&order, tc.batch_size) {
        let x = table.gather(batch)?;
        let labels = table.gather_labels(batch);
        let y = one_hot(&labels, classes)?;
        model.zero_grad();
        let probs = model.forward(&x)?;
        let loss = cross_entropy_loss(&probs, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss in epoch {epoch}")));
        }
        loss_sum += loss * batch.len() as f64;
        correct += argmax_rows(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
        model.backward_logits(&softmax_cross_entropy_grad(&probs, &y)?)?;
        optimizer.step_model(model);
    }
    let n = order.len() as f64;
    Ok(EpochMetrics { epoch, mean_loss: loss_sum / n, train_accuracy: correct as f64 / n })
}

/// `tc.epochs` epochs, reporting each to `on_epoch` as it finishes.
pub fn fit(
    model: &mut LuNetModel,
    table: &DatasetTable,
    rows: &[usize],
    tc: &TrainConfig,
    oc: &RmsPropConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let mut optimizer = RmsProp::new(*oc)?;
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let m = train_epoch(model, table, rows, tc, &mut optimizer, epoch)?;
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

/// Infer-mode class predictions for `rows`, evaluated in chunks.
pub fn predict_rows(model: &mut LuNetModel, table: &DatasetTable, rows: &[usize], chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for part in rows.chunks(chunk.max(1)) {
        let probs = model.predict_proba(&table.gather(part)?)?;
        if !probs.all_finite() {
            return Err(Error::NonFinite("class probabilities".into()));
        }
        out.extend(argmax_rows(&probs));
    }
    Ok(out)
}
