use super::{check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `max(0, z)` with subgradient 0 at `z = 0`.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    params: LayerParams,
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.input = Some(x.clone());
        Ok(x.map_activation(crate::tensor::Activation::Relu))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| missing_forward(LayerKind::Relu))?;
        check_upstream(LayerKind::Relu, x.shape(), upstream)?;
        let dx = x.data().iter().zip(upstream.data()).map(|(&z, &g)| if z > 0.0 { g } else { 0.0 }).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
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

/// Row-wise `exp(x - max) / sum exp(x - max)` over `[batch, classes]`.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let [_, classes] = x.dims2("softmax")?;
    if classes < 2 {
        return Err(Error::ShapeMismatch { op: "softmax", detail: format!("{classes} classes") });
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let sum: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

#[derive(Debug, Clone, Default)]
pub struct Softmax {
    params: LayerParams,
    output: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Softmax {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let y = softmax(x)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    /// Full Jacobian-vector product `p * (g - <g, p>)`. Training fuses
    /// softmax with cross-entropy instead of calling this.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let p = self.output.as_ref().ok_or_else(|| missing_forward(LayerKind::Softmax))?;
        check_upstream(LayerKind::Softmax, p.shape(), upstream)?;
        let classes = p.shape()[1];
        let mut dx = Vec::with_capacity(p.len());
        for (pr, gr) in p.data().chunks_exact(classes).zip(upstream.data().chunks_exact(classes)) {
            let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
            dx.extend(pr.iter().zip(gr).map(|(pi, gi)| pi * (gi - dot)));
        }
        Ok(Tensor::from_parts(p.shape().to_vec(), dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [c] if c >= 2 => Ok(vec![c]),
            _ => Err(Error::ShapeMismatch { op: "softmax", detail: format!("input {input:?}") }),
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
