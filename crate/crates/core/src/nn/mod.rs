//! Differentiable layers.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! layer instance must see `forward` then `backward` in that order. Shapes
//! passed to [`Layer::output_shape`] exclude the leading batch dimension.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod pool;
mod reshape;

pub use activation::{softmax, Relu, Softmax};
pub use batchnorm::{batchnorm_forward, BatchNorm, BatchNormState};
pub use conv::{conv1d_forward, Conv1d};
pub use dense::{dense_forward, Dense};
pub use dropout::{dropout_forward, Dropout};
pub use lstm::{lstm_forward, lstm_step, Lstm, LstmState, GATES};
pub use pool::{global_avg_pool, maxpool1d_forward, GlobalAvgPool, MaxPool1d};
pub use reshape::{reshape_bridge, Reshape};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv1d,
    Relu,
    MaxPool1d,
    BatchNorm,
    Lstm,
    Reshape,
    Dropout,
    GlobalAvgPool,
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv1d => "conv1d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool1d => "maxpool",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Lstm => "lstm",
            LayerKind::Reshape => "reshape",
            LayerKind::Dropout => "dropout",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A named trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Ordered, uniquely named parameters of one layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    entries: Vec<Param>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter name '{name}'")));
        }
        let grad = value.zeros_like();
        self.entries.push(Param { name: name.to_owned(), value, grad });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    /// Replaces a parameter value, keeping the shape fixed.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                detail: format!("'{name}' is {:?}, got {:?}", p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }
}

pub trait Layer: Send + Sync {
    fn kind(&self) -> LayerKind;

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Gradient w.r.t. the last forward input. Parameter gradients are
    /// accumulated (added) into `params_mut()`.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn params(&self) -> &LayerParams;

    fn params_mut(&mut self) -> &mut LayerParams;

    /// Non-trainable persistent state (batch-norm running statistics).
    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }

    /// Reuse the previous random draws on later forwards. No-op for
    /// deterministic layers.
    fn freeze_randomness(&mut self, _frozen: bool) {}

    fn box_clone(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn check_upstream(kind: LayerKind, expected: &[usize], upstream: &Tensor) -> Result<()> {
    if upstream.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "backward",
            detail: format!("{kind}: upstream {:?}, forward output was {expected:?}", upstream.shape()),
        });
    }
    Ok(())
}

pub(crate) fn missing_forward(kind: LayerKind) -> Error {
    Error::BackwardWithoutForward { layer: kind.name().to_owned() }
}

/// Column sums of a row-major `[rows, cols]` buffer added into `out`.
pub(crate) fn add_column_sums(data: &[f64], cols: usize, out: &mut [f64]) {
    for row in data.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}
