use super::{check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn pool_geometry(x: &Tensor, pool: usize) -> Result<[usize; 4]> {
    let [batch, length, channels] = x.dims3("maxpool")?;
    if pool == 0 || length < pool {
        return Err(Error::ShapeMismatch {
            op: "maxpool",
            detail: format!("length {length} with pool size {pool}"),
        });
    }
    Ok([batch, length, channels, length / pool])
}

/// Returns the pooled tensor and, per output element, the flat input index of
/// the window maximum (first occurrence on ties).
fn maxpool_with_argmax(x: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    let [batch, length, channels, out_len] = pool_geometry(x, pool)?;
    let data = x.data();
    let mut out = Vec::with_capacity(batch * out_len * channels);
    let mut argmax = Vec::with_capacity(out.capacity());
    for b in 0..batch {
        for w in 0..out_len {
            for c in 0..channels {
                let mut best = (b * length + w * pool) * channels + c;
                for j in 1..pool {
                    let idx = (b * length + w * pool + j) * channels + c;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![batch, out_len, channels], out), argmax))
}

/// Non-overlapping max pooling along the length axis; a trailing remainder
/// shorter than `pool` is dropped.
pub fn maxpool1d_forward(x: &Tensor, pool: usize) -> Result<Tensor> {
    maxpool_with_argmax(x, pool).map(|(out, _)| out)
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pool: usize,
    params: LayerParams,
    cache: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::InvalidArgument("pool size must be positive".into()));
        }
        Ok(Self { pool, params: LayerParams::new(), cache: None })
    }
}

impl Layer for MaxPool1d {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool1d
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (out, argmax) = maxpool_with_argmax(x, self.pool)?;
        self.cache = Some((x.shape().to_vec(), out.shape().to_vec(), argmax));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (in_shape, out_shape, argmax) = self.cache.as_ref().ok_or_else(|| missing_forward(self.kind()))?;
        check_upstream(self.kind(), out_shape, upstream)?;
        let mut dx = vec![0.0; in_shape.iter().product()];
        for (&idx, &g) in argmax.iter().zip(upstream.data()) {
            dx[idx] += g;
        }
        Ok(Tensor::from_parts(in_shape.clone(), dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [length, c] if length >= self.pool => Ok(vec![length / self.pool, c]),
            _ => Err(Error::ShapeMismatch {
                op: "maxpool",
                detail: format!("input {input:?} with pool size {}", self.pool),
            }),
        }
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Mean over the length axis: `[batch, length, c] -> [batch, c]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [batch, length, channels] = x.dims3("global_avg_pool")?;
    let mut out = vec![0.0; batch * channels];
    for (b, sample) in x.data().chunks_exact(length * channels).enumerate() {
        let acc = &mut out[b * channels..][..channels];
        for step in sample.chunks_exact(channels) {
            for (a, v) in acc.iter_mut().zip(step) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= length as f64);
    }
    Ok(Tensor::from_parts(vec![batch, channels], out))
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    params: LayerParams,
    input_shape: Option<[usize; 3]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn kind(&self) -> LayerKind {
        LayerKind::GlobalAvgPool
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out = global_avg_pool(x)?;
        self.input_shape = Some(x.dims3("global_avg_pool")?);
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let [batch, length, channels] = self.input_shape.ok_or_else(|| missing_forward(self.kind()))?;
        check_upstream(self.kind(), &[batch, channels], upstream)?;
        let scale = 1.0 / length as f64;
        let mut dx = Vec::with_capacity(batch * length * channels);
        for row in upstream.data().chunks_exact(channels) {
            for _ in 0..length {
                dx.extend(row.iter().map(|g| g * scale));
            }
        }
        Ok(Tensor::from_parts(vec![batch, length, channels], dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [_, c] => Ok(vec![c]),
            _ => Err(Error::ShapeMismatch { op: "global_avg_pool", detail: format!("input {input:?}") }),
        }
    }

    fn params(&self) -> &LayerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut LayerParams {
        &mut self.params
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn maxpool_examples() {
        assert_eq!(maxpool1d_forward(&seq(&[1.0, 3.0, 2.0, 5.0]), 2).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(maxpool1d_forward(&seq(&[7.0]), 1).unwrap().data(), &[7.0]);
        let out = maxpool1d_forward(&seq(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[2.0]);
        assert!(maxpool1d_forward(&seq(&[1.0]), 2).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut pool = MaxPool1d::new(2).unwrap();
        pool.forward(&seq(&[4.0, 4.0, 1.0, 1.0]), Mode::Train).unwrap();
        let dx = pool.backward(&Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gap_examples() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.0, 4.0]);
        let x = Tensor::from_vec(&[2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), x.data());
    }
}
