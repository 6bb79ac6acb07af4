//! Batch normalization over the last (feature/channel) axis.
//!
//! For rank-3 input `[batch, length, c]` each channel is normalized over all
//! `batch * length` positions; for rank-2 `[batch, features]` over the batch.

use super::{check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// Running mean starts at 0 and running variance at 1.
    pub fn new(features: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} not in (0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
        }
        Ok(Self {
            running_mean: Tensor::zeros(&[features])?,
            running_var: Tensor::new(&[features], 1.0)?,
            momentum,
            epsilon,
        })
    }
}

#[derive(Debug, Clone)]
struct Cache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn features_of(x: &Tensor) -> Result<(usize, usize)> {
    let features = *x.shape().last().unwrap();
    if x.rank() < 2 {
        return Err(Error::ShapeMismatch { op: "batchnorm", detail: format!("rank-1 input {:?}", x.shape()) });
    }
    Ok((x.len() / features, features))
}

fn forward_cached(x: &Tensor, params: &LayerParams, state: &mut BatchNormState, mode: Mode) -> Result<(Tensor, Cache)> {
    let (rows, features) = features_of(x)?;
    let gamma = params.value("gamma")?.data();
    let beta = params.value("beta")?.data();
    if gamma.len() != features || state.running_mean.len() != features {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            detail: format!("{features} features, gamma has {}", gamma.len()),
        });
    }
    let data = x.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if rows < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batch normalization needs at least 2 rows in train mode, got {rows}"
                )));
            }
            let mut mean = vec![0.0; features];
            for row in data.chunks_exact(features) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; features];
            for row in data.chunks_exact(features) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);

            let mom = state.momentum;
            for (r, m) in state.running_mean.data_mut().iter_mut().zip(&mean) {
                *r = mom * *r + (1.0 - mom) * m;
            }
            for (r, v) in state.running_var.data_mut().iter_mut().zip(&var) {
                *r = mom * *r + (1.0 - mom) * v;
            }
            (mean, var)
        }
        Mode::Infer => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let mut xhat = Vec::with_capacity(data.len());
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(features) {
        for f in 0..features {
            let h = (row[f] - mean[f]) * inv_std[f];
            xhat.push(h);
            out.push(gamma[f] * h + beta[f]);
        }
    }
    let cache = Cache { shape: x.shape().to_vec(), xhat, inv_std, mode };
    Ok((Tensor::from_parts(x.shape().to_vec(), out), cache))
}

/// `y = gamma * (x - mu) / sqrt(var + eps) + beta`, batch statistics in train
/// mode (which also updates the running averages), running statistics in
/// infer mode.
pub fn batchnorm_forward(x: &Tensor, params: &LayerParams, state: &mut BatchNormState, mode: Mode) -> Result<Tensor> {
    forward_cached(x, params, state, mode).map(|(y, _)| y)
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    params: LayerParams,
    state: BatchNormState,
    cache: Option<Cache>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Result<Self> {
        Self::with_state(BatchNormState::new(features, BatchNormState::DEFAULT_MOMENTUM, BatchNormState::DEFAULT_EPSILON)?)
    }

    pub fn with_state(state: BatchNormState) -> Result<Self> {
        let features = state.running_mean.len();
        let mut params = LayerParams::new();
        params.insert("gamma", Tensor::new(&[features], 1.0)?)?;
        params.insert("beta", Tensor::zeros(&[features])?)?;
        Ok(Self { params, state, cache: None })
    }

    pub fn state(&self) -> &BatchNormState {
        &self.state
    }

    fn features(&self) -> usize {
        self.state.running_mean.len()
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (y, cache) = forward_cached(x, &self.params, &mut self.state, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_forward(LayerKind::BatchNorm))?;
        check_upstream(LayerKind::BatchNorm, &cache.shape, upstream)?;
        let features = self.features();
        let rows = upstream.len() / features;
        let dy = upstream.data();

        let mut sum_dy = vec![0.0; features];
        let mut sum_dy_xhat = vec![0.0; features];
        for (g, h) in dy.chunks_exact(features).zip(cache.xhat.chunks_exact(features)) {
            for f in 0..features {
                sum_dy[f] += g[f];
                sum_dy_xhat[f] += g[f] * h[f];
            }
        }
        let gamma = self.params.value("gamma")?.data().to_vec();
        let mut dx = Vec::with_capacity(dy.len());
        match cache.mode {
            Mode::Train => {
                let n = rows as f64;
                for (g, h) in dy.chunks_exact(features).zip(cache.xhat.chunks_exact(features)) {
                    for f in 0..features {
                        let k = gamma[f] * cache.inv_std[f] / n;
                        dx.push(k * (n * g[f] - sum_dy[f] - h[f] * sum_dy_xhat[f]));
                    }
                }
            }
            Mode::Infer => {
                for g in dy.chunks_exact(features) {
                    for f in 0..features {
                        dx.push(g[f] * gamma[f] * cache.inv_std[f]);
                    }
                }
            }
        }
        let [gamma_p, beta_p] = self.params.entries_mut() else { unreachable!() };
        for f in 0..features {
            gamma_p.grad.data_mut()[f] += sum_dy_xhat[f];
            beta_p.grad.data_mut()[f] += sum_dy[f];
        }
        Ok(Tensor::from_parts(cache.shape.clone(), dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.last() != Some(&self.features()) {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                detail: format!("input {input:?} for {} features", self.features()),
            });
        }
        Ok(input.to_vec())
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("running_mean", &self.state.running_mean), ("running_var", &self.state.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("running_mean", &mut self.state.running_mean), ("running_var", &mut self.state.running_var)]
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn normalizes_a_column() {
        let mut bn = BatchNorm::new(1).unwrap();
        let y = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        // mean 2, population variance 2/3
        let expect = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert_eq!(y.data()[1], 0.0);
        assert!((y.data()[2] - expect).abs() < 1e-12);
        assert!((expect - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_column_is_zero() {
        let mut bn = BatchNorm::new(1).unwrap();
        let y = bn.forward(&column(&[5.0, 5.0, 5.0]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn affine_applies_gamma_beta() {
        let mut bn = BatchNorm::new(1).unwrap();
        bn.params_mut().set_value("gamma", Tensor::new(&[1], 2.0).unwrap()).unwrap();
        bn.params_mut().set_value("beta", Tensor::new(&[1], 1.0).unwrap()).unwrap();
        // middle element has xhat = 0
        let y = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        assert_eq!(y.data()[1], 1.0);
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let mut bn = BatchNorm::new(1).unwrap();
        assert!(bn.forward(&column(&[1.0]), Mode::Train).is_err());
        assert!(bn.forward(&column(&[1.0]), Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_update_and_infer_uses_them() {
        let mut bn = BatchNorm::new(1).unwrap();
        bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        let s = bn.state().clone();
        assert!((s.running_mean.data()[0] - 0.01 * 2.0).abs() < 1e-15);
        assert!((s.running_var.data()[0] - (0.99 + 0.01 * 2.0 / 3.0)).abs() < 1e-15);
        let y = bn.forward(&column(&[4.0]), Mode::Infer).unwrap();
        let expect = (4.0 - 0.02) / (s.running_var.data()[0] + 1e-5).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn bad_state_rejected() {
        assert!(BatchNormState::new(2, 1.0, 1e-5).is_err());
        assert!(BatchNormState::new(2, 0.9, 0.0).is_err());
    }
}
