use super::{check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major reinterpretation of `[batch, length, c]` as `[batch, length', c']`.
pub fn reshape_bridge(x: &Tensor, length: usize, channels: usize) -> Result<Tensor> {
    let [batch, _, _] = x.dims3("reshape_bridge")?;
    x.reshape(&[batch, length, channels])
}

/// Keeps the batch axis and reshapes each sample to `target`.
#[derive(Debug, Clone)]
pub struct Reshape {
    target: Vec<usize>,
    params: LayerParams,
    input_shape: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(target: &[usize]) -> Result<Self> {
        if target.is_empty() || target.len() > 2 || target.contains(&0) {
            return Err(Error::InvalidShape(target.to_vec()));
        }
        Ok(Self { target: target.to_vec(), params: LayerParams::new(), input_shape: None })
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }
}

impl Layer for Reshape {
    fn kind(&self) -> LayerKind {
        LayerKind::Reshape
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let mut shape = vec![x.shape()[0]];
        shape.extend_from_slice(&self.target);
        let y = x.reshape(&shape)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input_shape = self.input_shape.as_ref().ok_or_else(|| missing_forward(LayerKind::Reshape))?;
        let mut expected = vec![input_shape[0]];
        expected.extend_from_slice(&self.target);
        check_upstream(LayerKind::Reshape, &expected, upstream)?;
        upstream.reshape(input_shape)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.iter().product::<usize>() != self.target.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{input:?} cannot become {:?}", self.target),
            });
        }
        Ok(self.target.clone())
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
