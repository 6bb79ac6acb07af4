use super::{add_column_sums, check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

fn check(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<[usize; 3]> {
    let [batch, inputs] = x.dims2("dense")?;
    let [w_in, outputs] = weight.dims2("dense")?;
    if w_in != inputs || bias.shape() != [outputs] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            detail: format!("x {:?}, W {:?}, b {:?}", x.shape(), weight.shape(), bias.shape()),
        });
    }
    Ok([batch, inputs, outputs])
}

/// `x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [batch, inputs, outputs] = check(x, weight, bias)?;
    let mut out = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(batch, inputs, outputs, x.data(), false, weight.data(), false, &mut out, 1.0);
    Ok(Tensor::from_parts(vec![batch, outputs], out))
}

#[derive(Debug, Clone)]
pub struct Dense {
    params: LayerParams,
    input: Option<Tensor>,
}

impl Dense {
    /// He-normal weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let weight = Tensor::rng_normal(rng, &[inputs, outputs], 0.0, (2.0 / inputs as f64).sqrt())?;
        Self::from_tensors(weight, Tensor::zeros(&[outputs])?)
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [_, outputs] = weight.dims2("dense")?;
        if bias.shape() != [outputs] {
            return Err(Error::ShapeMismatch { op: "dense", detail: format!("bias {:?}", bias.shape()) });
        }
        let mut params = LayerParams::new();
        params.insert("W", weight)?;
        params.insert("b", bias)?;
        Ok(Self { params, input: None })
    }
}

impl Layer for Dense {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out = dense_forward(x, self.params.value("W")?, self.params.value("b")?)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| missing_forward(LayerKind::Dense))?;
        let [batch, inputs] = x.dims2("dense")?;
        let [weight, bias] = self.params.entries_mut() else { unreachable!() };
        let outputs = bias.value.len();
        check_upstream(LayerKind::Dense, &[batch, outputs], upstream)?;
        let dy = upstream.data();
        gemm(inputs, batch, outputs, x.data(), true, dy, false, weight.grad.data_mut(), 1.0);
        add_column_sums(dy, outputs, bias.grad.data_mut());
        let mut dx = vec![0.0; batch * inputs];
        gemm(batch, outputs, inputs, dy, false, weight.value.data(), true, &mut dx, 0.0);
        Ok(Tensor::from_parts(vec![batch, inputs], dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let w = self.params.entries[0].value.shape();
        match *input {
            [i] if i == w[0] => Ok(vec![w[1]]),
            _ => Err(Error::ShapeMismatch { op: "dense", detail: format!("input {input:?} for W {w:?}") }),
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
