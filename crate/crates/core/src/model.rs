//! The LuNet layer stack.
//!
//! ```text
//! input [F] -> [F, 1]
//! per level w: Conv1d(w) -> ReLU -> MaxPool -> BatchNorm -> LSTM(w, sequences) -> Reshape
//! Dropout -> Conv1d(final) -> ReLU -> GlobalAvgPool -> Dense(classes) -> Softmax
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, BatchNormState, Conv1d, Dense, Dropout, GlobalAvgPool, Layer, LayerKind, Lstm, MaxPool1d, Mode,
    Relu, Reshape, Softmax,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct LuNetSpec {
    /// Filter count of each level's convolution, equal to its LSTM cell count.
    pub levels: Vec<usize>,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub final_conv_filters: usize,
    pub num_classes: usize,
    pub input_features: usize,
    pub init_seed: u64,
    /// Std of the Gaussian used for LSTM `U` and `W`.
    pub lstm_init_std: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for LuNetSpec {
    fn default() -> Self {
        Self {
            levels: vec![64, 128, 256],
            kernel_size: 3,
            pool_size: 2,
            dropout_rate: 0.5,
            final_conv_filters: 256,
            num_classes: 2,
            input_features: 122,
            init_seed: 0,
            lstm_init_std: 0.1,
            bn_momentum: BatchNormState::DEFAULT_MOMENTUM,
            bn_epsilon: BatchNormState::DEFAULT_EPSILON,
        }
    }
}

impl LuNetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Build { stage: "spec".into(), detail });
        if self.levels.is_empty() || self.levels.contains(&0) {
            return fail(format!("levels must be non-empty positive widths, got {:?}", self.levels));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.kernel_size == 0 || self.pool_size == 0 || self.final_conv_filters == 0 || self.input_features == 0 {
            return fail("kernel_size, pool_size, final_conv_filters and input_features must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if !(self.lstm_init_std >= 0.0) {
            return fail(format!("lstm_init_std {} must be >= 0", self.lstm_init_std));
        }
        Ok(())
    }

    /// Sequence length entering each level's LSTM, or the level that runs out.
    pub fn level_lengths(&self) -> Result<Vec<usize>> {
        let mut length = self.input_features;
        let mut out = Vec::with_capacity(self.levels.len());
        for (k, _) in self.levels.iter().enumerate() {
            if length < self.kernel_size || (length - self.kernel_size + 1) < self.pool_size {
                return Err(Error::Build {
                    stage: format!("level {k}"),
                    detail: format!(
                        "input length {length} too short for kernel {} and pool {}",
                        self.kernel_size, self.pool_size
                    ),
                });
            }
            length = (length - self.kernel_size + 1) / self.pool_size;
            out.push(length);
        }
        if length < self.kernel_size {
            return Err(Error::Build {
                stage: "final conv".into(),
                detail: format!("length {length} shorter than kernel {}", self.kernel_size),
            });
        }
        Ok(out)
    }

    /// `key=value` pairs under the `model.` prefix, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let levels = self.levels.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        [
            ("levels", levels),
            ("kernel_size", self.kernel_size.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("dropout_rate", format!("{:?}", self.dropout_rate)),
            ("final_conv_filters", self.final_conv_filters.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("input_features", self.input_features.to_string()),
            ("init_seed", self.init_seed.to_string()),
            ("lstm_init_std", format!("{:?}", self.lstm_init_std)),
            ("bn_momentum", format!("{:?}", self.bn_momentum)),
            ("bn_epsilon", format!("{:?}", self.bn_epsilon)),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    /// Applies one `model.*` key. Returns `Ok(false)` for keys outside the prefix.
    pub fn set_pair(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(field) = key.strip_prefix("model.") else {
            return Ok(false);
        };
        let bad = || Error::InvalidArgument(format!("bad value '{value}' for {key}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let float = || value.trim().parse::<f64>().map_err(|_| bad());
        match field {
            "levels" => {
                self.levels = value.split(',').map(|w| w.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<_>>()?
            }
            "kernel_size" => self.kernel_size = int()?,
            "pool_size" => self.pool_size = int()?,
            "dropout_rate" => self.dropout_rate = float()?,
            "final_conv_filters" => self.final_conv_filters = int()?,
            "num_classes" => self.num_classes = int()?,
            "input_features" => self.input_features = int()?,
            "init_seed" => self.init_seed = value.trim().parse().map_err(|_| bad())?,
            "lstm_init_std" => self.lstm_init_std = float()?,
            "bn_momentum" => self.bn_momentum = float()?,
            "bn_epsilon" => self.bn_epsilon = float()?,
            _ => return Err(Error::InvalidArgument(format!("unknown key {key}"))),
        }
        Ok(true)
    }
}

#[derive(Clone)]
pub struct LuNetModel {
    spec: LuNetSpec,
    layers: Vec<Box<dyn Layer>>,
    /// Per-sample shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    mode: Mode,
}

impl fmt::Debug for LuNetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LuNetModel")
            .field("spec", &self.spec)
            .field("layers", &self.layers.iter().map(|l| l.kind()).collect::<Vec<_>>())
            .field("mode", &self.mode)
            .finish()
    }
}

impl LuNetModel {
    /// Instantiates and shape-checks the stack. All random draws come from one
    /// `Rng` seeded with `spec.init_seed`, in layer order.
    pub fn build(spec: &LuNetSpec) -> Result<Self> {
        spec.validate()?;
        spec.level_lengths()?;
        let mut rng = Rng::new(spec.init_seed);
        let mut layers: Vec<Box<dyn Layer>> = vec![Box::new(Reshape::new(&[spec.input_features, 1])?)];
        let mut channels = 1;
        let mut length = spec.input_features;
        for &width in &spec.levels {
            layers.push(Box::new(Conv1d::new(channels, width, spec.kernel_size, &mut rng)?));
            layers.push(Box::new(Relu::new()));
            layers.push(Box::new(MaxPool1d::new(spec.pool_size)?));
            layers.push(Box::new(BatchNorm::with_state(BatchNormState::new(width, spec.bn_momentum, spec.bn_epsilon)?)?));
            layers.push(Box::new(Lstm::new(width, width, true, spec.lstm_init_std, &mut rng)?));
            length = (length - spec.kernel_size + 1) / spec.pool_size;
            layers.push(Box::new(Reshape::new(&[length, width])?));
            channels = width;
        }
        layers.push(Box::new(Dropout::new(spec.dropout_rate, rng.next_u64())?));
        layers.push(Box::new(Conv1d::new(channels, spec.final_conv_filters, spec.kernel_size, &mut rng)?));
        layers.push(Box::new(Relu::new()));
        layers.push(Box::new(GlobalAvgPool::new()));
        layers.push(Box::new(Dense::new(spec.final_conv_filters, spec.num_classes, &mut rng)?));
        layers.push(Box::new(Softmax::new()));

        let mut shapes = vec![vec![spec.input_features]];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(shapes.last().unwrap()).map_err(|e| Error::Build {
                stage: format!("layer {i} ({})", layer.kind()),
                detail: e.to_string(),
            })?;
            shapes.push(next);
        }
        Ok(Self { spec: spec.clone(), layers, shapes, mode: Mode::Train })
    }

    pub fn spec(&self) -> &LuNetSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Switches batch-norm statistics and dropout together.
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    /// Per-sample shapes at every layer boundary, input first.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params().iter()).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.params_mut().zero_grad();
        }
    }

    /// Makes dropout reuse its last mask (for finite-difference checks).
    pub fn freeze_dropout(&mut self, frozen: bool) {
        for layer in &mut self.layers {
            layer.freeze_randomness(frozen);
        }
    }

    /// Class probabilities `[batch, num_classes]` in the current mode.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward_in(x, self.mode)
    }

    fn forward_in(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [_, features] = x.dims2("model forward")?;
        if features != self.spec.input_features {
            return Err(Error::WidthMismatch { expected: self.spec.input_features, found: features });
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode)?;
            if h.shape()[1..] != self.shapes[i + 1][..] {
                return Err(Error::ShapeMismatch {
                    op: "model forward",
                    detail: format!("layer {i} ({}) produced {:?}, expected {:?}", layer.kind(), &h.shape()[1..], self.shapes[i + 1]),
                });
            }
        }
        Ok(h)
    }

    /// Backpropagates a gradient w.r.t. the pre-softmax logits through every
    /// layer below the softmax. Returns the gradient w.r.t. the model input.
    pub fn backward_logits(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        debug_assert_eq!(self.layers[n - 1].kind(), LayerKind::Softmax);
        let mut g = dlogits.clone();
        for layer in self.layers[..n - 1].iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Arg-max class per row in infer mode; ties go to the lowest index.
    pub fn predict_class(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        let probs = self.forward_in(x, Mode::Infer)?;
        Ok(argmax_rows(&probs))
    }

    pub fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward_in(x, Mode::Infer)
    }
}

/// Index of the first maximum in each row of a `[batch, classes]` tensor.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let classes = probs.shape()[probs.rank() - 1];
    probs
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}
