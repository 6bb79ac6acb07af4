//! Central finite-difference checks of analytic gradients.
//!
//! Layers are checked against the scalar objective `sum(out * r)` for a fixed
//! random `r`; the softmax layer and whole models against mean cross-entropy.
//! Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{LuNetModel, LuNetSpec};
use crate::nn::{
    BatchNorm, Conv1d, Dense, Dropout, GlobalAvgPool, Layer, LayerKind, LayerParams, Lstm, MaxPool1d, Mode, Relu,
    Reshape, Softmax,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{cross_entropy_loss, one_hot, softmax_cross_entropy_grad, LOG_FLOOR};

pub const STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per tensor (all of them when the tensor is smaller).
pub const DEFAULT_COORDS: usize = 64;
const DENOMINATOR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    /// `input` or the parameter name, prefixed with the layer index for models.
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub target: String,
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    /// Parameter entries only.
    pub fn param_entries(&self) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(|e| e.name != "input")
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        write!(f, "{:<24} {:>12.3e}  {status}", self.target, self.max_rel_error())
    }
}

/// What the checked scalar is built from.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(out * weights)`
    Weighted(Tensor),
    /// Mean cross-entropy of probability rows against one-hot targets.
    CrossEntropy(Tensor),
}

impl Objective {
    fn value(&self, out: &Tensor) -> Result<f64> {
        match self {
            Objective::Weighted(r) => {
                if r.shape() != out.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "gradient_check",
                        detail: format!("weights {:?}, output {:?}", r.shape(), out.shape()),
                    });
                }
                Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
            }
            Objective::CrossEntropy(y) => cross_entropy_loss(out, y),
        }
    }

    fn grad(&self, out: &Tensor) -> Result<Tensor> {
        match self {
            Objective::Weighted(r) => Ok(r.clone()),
            Objective::CrossEntropy(y) => {
                let batch = out.shape()[0] as f64;
                let data = out
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(p, y)| if *p > LOG_FLOOR { -y / (p * batch) } else { 0.0 })
                    .collect();
                Tensor::from_vec(out.shape(), data)
            }
        }
    }
}

fn sample_coords(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len > count {
        rng.shuffle(&mut all);
        all.truncate(count);
    }
    all
}

/// Checks one layer's input and parameter gradients at `x`.
pub fn check_layer(
    target: &str,
    layer: &mut dyn Layer,
    x: &Tensor,
    mode: Mode,
    objective: &Objective,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    layer.params_mut().zero_grad();
    let out = layer.forward(x, mode)?;
    layer.freeze_randomness(true);
    let dx = layer.backward(&objective.grad(&out)?)?;
    let analytic: Vec<(String, Vec<f64>)> =
        layer.params().iter().map(|p| (p.name().to_owned(), p.grad.data().to_vec())).collect();

    let mut entries = Vec::new();
    let mut xp = x.clone();
    let picked = sample_coords(x.len(), coords, &mut rng);
    let mut worst = 0.0f64;
    for &c in &picked {
        let orig = x.data()[c];
        xp.data_mut()[c] = orig + STEP;
        let plus = objective.value(&layer.forward(&xp, mode)?)?;
        xp.data_mut()[c] = orig - STEP;
        let minus = objective.value(&layer.forward(&xp, mode)?)?;
        xp.data_mut()[c] = orig;
        worst = worst.max(relative_error(dx.data()[c], (plus - minus) / (2.0 * STEP)));
    }
    entries.push(GradEntry { name: "input".into(), coords: picked.len(), max_rel_error: worst });

    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let picked = sample_coords(grad.len(), coords, &mut rng);
        let mut worst = 0.0f64;
        for &c in &picked {
            let slot = |layer: &mut dyn Layer, v: f64| layer.params_mut().entries_mut()[pi].value.data_mut()[c] = v;
            let orig = layer.params().iter().nth(pi).unwrap().value.data()[c];
            slot(layer, orig + STEP);
            let plus = objective.value(&layer.forward(x, mode)?)?;
            slot(layer, orig - STEP);
            let minus = objective.value(&layer.forward(x, mode)?)?;
            slot(layer, orig);
            worst = worst.max(relative_error(grad[c], (plus - minus) / (2.0 * STEP)));
        }
        entries.push(GradEntry { name: name.clone(), coords: picked.len(), max_rel_error: worst });
    }
    layer.freeze_randomness(false);
    Ok(GradCheckReport { target: target.to_owned(), entries, tolerance: DEFAULT_TOLERANCE })
}

/// Checks the fused `(p - y) / batch` logit gradient against differences of
/// `cross_entropy(softmax(z))`.
pub fn check_softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<GradEntry> {
    let [_, classes] = logits.dims2("gradient_check")?;
    let y = one_hot(labels, classes)?;
    let loss = |z: &Tensor| -> Result<f64> { cross_entropy_loss(&crate::nn::softmax(z)?, &y) };
    let analytic = softmax_cross_entropy_grad(&crate::nn::softmax(logits)?, &y)?;
    let mut z = logits.clone();
    let mut worst = 0.0f64;
    for c in 0..z.len() {
        let orig = logits.data()[c];
        z.data_mut()[c] = orig + STEP;
        let plus = loss(&z)?;
        z.data_mut()[c] = orig - STEP;
        let minus = loss(&z)?;
        z.data_mut()[c] = orig;
        worst = worst.max(relative_error(analytic.data()[c], (plus - minus) / (2.0 * STEP)));
    }
    Ok(GradEntry { name: "fused-logits".into(), coords: z.len(), max_rel_error: worst })
}

/// Checks a whole model under mean cross-entropy in train mode, with the
/// dropout mask frozen after the first forward.
pub fn check_model(
    target: &str,
    model: &mut LuNetModel,
    x: &Tensor,
    labels: &[usize],
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let y = one_hot(labels, model.spec().num_classes)?;
    model.set_mode(Mode::Train);
    model.zero_grad();
    let probs = model.forward(x)?;
    model.freeze_dropout(true);
    let dx = model.backward_logits(&softmax_cross_entropy_grad(&probs, &y)?)?;
    let loss = |model: &mut LuNetModel, x: &Tensor| -> Result<f64> { cross_entropy_loss(&model.forward(x)?, &y) };

    let mut entries = Vec::new();
    let mut xp = x.clone();
    let picked = sample_coords(x.len(), coords, &mut rng);
    let mut worst = 0.0f64;
    for &c in &picked {
        let orig = x.data()[c];
        xp.data_mut()[c] = orig + STEP;
        let plus = loss(model, &xp)?;
        xp.data_mut()[c] = orig - STEP;
        let minus = loss(model, &xp)?;
        xp.data_mut()[c] = orig;
        worst = worst.max(relative_error(dx.data()[c], (plus - minus) / (2.0 * STEP)));
    }
    entries.push(GradEntry { name: "input".into(), coords: picked.len(), max_rel_error: worst });

    let params: Vec<(usize, usize, String, Vec<f64>)> = model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(li, l)| {
            l.params()
                .iter()
                .enumerate()
                .map(move |(pi, p)| (li, pi, format!("layer{li}.{}.{}", l.kind(), p.name()), p.grad.data().to_vec()))
        })
        .collect();
    for (li, pi, name, grad) in params {
        let picked = sample_coords(grad.len(), coords, &mut rng);
        let mut worst = 0.0f64;
        for &c in &picked {
            let slot =
                |m: &mut LuNetModel, v: f64| m.layers_mut()[li].params_mut().entries_mut()[pi].value.data_mut()[c] = v;
            let orig = model.layers()[li].params().iter().nth(pi).unwrap().value.data()[c];
            slot(model, orig + STEP);
            let plus = loss(model, x)?;
            slot(model, orig - STEP);
            let minus = loss(model, x)?;
            slot(model, orig);
            worst = worst.max(relative_error(grad[c], (plus - minus) / (2.0 * STEP)));
        }
        entries.push(GradEntry { name, coords: picked.len(), max_rel_error: worst });
    }
    model.freeze_dropout(false);
    Ok(GradCheckReport { target: target.to_owned(), entries, tolerance: DEFAULT_TOLERANCE })
}

/// Test hook: scales every gradient a wrapped layer produces by `factor`.
#[derive(Clone)]
pub struct Faulty {
    inner: Box<dyn Layer>,
    factor: f64,
}

impl Faulty {
    pub fn new(inner: Box<dyn Layer>, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl Layer for Faulty {
    fn kind(&self) -> LayerKind {
        self.inner.kind()
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.inner.forward(x, mode)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let before: Vec<Vec<f64>> = self.inner.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let dx = self.inner.backward(upstream)?;
        for (p, old) in self.inner.params_mut().iter_mut().zip(before) {
            for (g, o) in p.grad.data_mut().iter_mut().zip(old) {
                *g = o + self.factor * (*g - o);
            }
        }
        dx.scale(self.factor)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.inner.output_shape(input)
    }

    fn params(&self) -> &LayerParams {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        self.inner.params_mut()
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        self.inner.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        self.inner.buffers_mut()
    }

    fn freeze_randomness(&mut self, frozen: bool) {
        self.inner.freeze_randomness(frozen)
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

const FAULT_FACTOR: f64 = 1.1;

fn maybe_faulty(layer: Box<dyn Layer>, fault: Option<LayerKind>) -> Box<dyn Layer> {
    if fault == Some(layer.kind()) {
        Box::new(Faulty::new(layer, FAULT_FACTOR))
    } else {
        layer
    }
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    Tensor::rng_normal(rng, shape, 0.0, 1.0)
}

/// One report per layer type, in [`LayerKind`] order. `fault` wraps the
/// matching layer in [`Faulty`].
pub fn layer_suite(fault: Option<LayerKind>, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed);
    let mut cases: Vec<(Box<dyn Layer>, Tensor, Mode)> = Vec::new();
    cases.push((Box::new(Conv1d::new(3, 4, 3, &mut rng)?), randn(&mut rng, &[2, 7, 3])?, Mode::Train));
    cases.push((Box::new(Relu::new()), randn(&mut rng, &[2, 5, 3])?, Mode::Train));
    cases.push((Box::new(MaxPool1d::new(2)?), randn(&mut rng, &[2, 9, 3])?, Mode::Train));
    let mut bn = BatchNorm::new(3)?;
    bn.params_mut().set_value("gamma", Tensor::rng_normal(&mut rng, &[3], 1.0, 0.5)?)?;
    bn.params_mut().set_value("beta", randn(&mut rng, &[3])?)?;
    cases.push((Box::new(bn), randn(&mut rng, &[4, 5, 3])?, Mode::Train));
    cases.push((Box::new(Lstm::new(3, 4, true, 0.5, &mut rng)?), randn(&mut rng, &[2, 5, 3])?, Mode::Train));
    cases.push((Box::new(Reshape::new(&[4, 3])?), randn(&mut rng, &[2, 12])?, Mode::Train));
    cases.push((Box::new(Dropout::new(0.5, rng.next_u64())?), randn(&mut rng, &[3, 10])?, Mode::Train));
    cases.push((Box::new(GlobalAvgPool::new()), randn(&mut rng, &[2, 6, 3])?, Mode::Train));
    cases.push((Box::new(Dense::new(5, 3, &mut rng)?), randn(&mut rng, &[4, 5])?, Mode::Train));
    cases.push((Box::new(Softmax::new()), randn(&mut rng, &[4, 3])?, Mode::Train));

    let mut reports = Vec::with_capacity(cases.len());
    for (layer, x, mode) in cases {
        let mut layer = maybe_faulty(layer, fault);
        let kind = layer.kind();
        let out_shape = layer.forward(&x, mode)?.shape().to_vec();
        let objective = if kind == LayerKind::Softmax {
            let labels: Vec<usize> = (0..out_shape[0]).map(|_| rng.below(out_shape[1])).collect();
            Objective::CrossEntropy(one_hot(&labels, out_shape[1])?)
        } else {
            Objective::Weighted(randn(&mut rng, &out_shape)?)
        };
        let mut report = check_layer(kind.name(), layer.as_mut(), &x, mode, &objective, DEFAULT_COORDS, rng.next_u64())?;
        if let (LayerKind::Softmax, Objective::CrossEntropy(y)) = (kind, &objective) {
            let labels: Vec<usize> = y.data().chunks_exact(out_shape[1]).map(|r| r.iter().position(|&v| v == 1.0).unwrap()).collect();
            report.entries.push(check_softmax_cross_entropy(&x, &labels)?);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// The one-level model used by the model-scale check: 32 input features.
pub fn one_block_spec(seed: u64) -> LuNetSpec {
    LuNetSpec {
        levels: vec![8],
        final_conv_filters: 8,
        input_features: 32,
        num_classes: 3,
        init_seed: seed,
        lstm_init_std: 0.3,
        ..LuNetSpec::default()
    }
}

/// Model-scale check on a `[2, 32]` batch (viewed as `[2, 32, 1]`).
pub fn model_check(fault: Option<LayerKind>, seed: u64) -> Result<GradCheckReport> {
    let mut model = LuNetModel::build(&one_block_spec(seed))?;
    if fault.is_some() {
        for slot in model.layers_mut() {
            let layer = std::mem::replace(slot, Box::new(Relu::new()));
            *slot = maybe_faulty(layer, fault);
        }
    }
    let mut rng = Rng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let x = randn(&mut rng, &[2, 32])?;
    check_model("lunet-1block", &mut model, &x, &[0, 2], DEFAULT_COORDS, rng.next_u64())
}
