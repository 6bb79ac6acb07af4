use super::{add_column_sums, check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// Valid (unpadded) cross-correlation, stride 1.
///
/// `x` is `[batch, length, c_in]`, `filters` is `[c_out, c_in, m]`, `bias` is
/// `[c_out]`; the result is `[batch, length - m + 1, c_out]` with
/// `out[b,i,o] = bias[o] + sum_c sum_j x[b,i+j,c] * filters[o,c,j]`.
pub fn conv1d_forward(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let geom = Geometry::new(x, filters, bias)?;
    let patches = geom.im2col(x.data());
    Ok(geom.apply(&patches, filters.data(), bias.data()))
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    length: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    out_len: usize,
}

impl Geometry {
    fn new(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Self> {
        let [batch, length, c_in] = x.dims3("conv1d")?;
        let [c_out, fc_in, width] = filters.dims3("conv1d")?;
        if fc_in != c_in || bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("input {:?}, filters {:?}, bias {:?}", x.shape(), filters.shape(), bias.shape()),
            });
        }
        if length < width {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("input length {length} shorter than kernel {width}"),
            });
        }
        Ok(Self { batch, length, c_in, c_out, width, out_len: length - width + 1 })
    }

    fn rows(&self) -> usize {
        self.batch * self.out_len
    }

    fn cols(&self) -> usize {
        self.c_in * self.width
    }

    // patches[(b, i), (c, j)] = x[b, i + j, c], matching the filter layout.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (k, m) = (self.cols(), self.width);
        let mut patches = vec![0.0; self.rows() * k];
        for b in 0..self.batch {
            for i in 0..self.out_len {
                let row = &mut patches[(b * self.out_len + i) * k..][..k];
                for j in 0..m {
                    let src = &x[(b * self.length + i + j) * self.c_in..][..self.c_in];
                    for (c, &v) in src.iter().enumerate() {
                        row[c * m + j] = v;
                    }
                }
            }
        }
        patches
    }

    fn col2im(&self, dpatches: &[f64], dx: &mut [f64]) {
        let (k, m) = (self.cols(), self.width);
        for b in 0..self.batch {
            for i in 0..self.out_len {
                let row = &dpatches[(b * self.out_len + i) * k..][..k];
                for j in 0..m {
                    let dst = &mut dx[(b * self.length + i + j) * self.c_in..][..self.c_in];
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d += row[c * m + j];
                    }
                }
            }
        }
    }

    fn apply(&self, patches: &[f64], filters: &[f64], bias: &[f64]) -> Tensor {
        let mut out = Vec::with_capacity(self.rows() * self.c_out);
        for _ in 0..self.rows() {
            out.extend_from_slice(bias);
        }
        gemm(self.rows(), self.cols(), self.c_out, patches, false, filters, true, &mut out, 1.0);
        Tensor::from_parts(vec![self.batch, self.out_len, self.c_out], out)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    params: LayerParams,
    cache: Option<(Geometry, Vec<f64>)>,
}

impl Conv1d {
    /// He-normal filters (std `sqrt(2 / (c_in * width))`), zero bias.
    pub fn new(c_in: usize, c_out: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        let std = (2.0 / (c_in * width) as f64).sqrt();
        let filters = Tensor::rng_normal(rng, &[c_out, c_in, width], 0.0, std)?;
        Self::from_tensors(filters, Tensor::zeros(&[c_out])?)
    }

    pub fn from_tensors(filters: Tensor, bias: Tensor) -> Result<Self> {
        let [c_out, _, _] = filters.dims3("conv1d")?;
        if bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("bias {:?} for {c_out} filters", bias.shape()),
            });
        }
        let mut params = LayerParams::new();
        params.insert("filters", filters)?;
        params.insert("bias", bias)?;
        Ok(Self { params, cache: None })
    }

    fn filter_dims(&self) -> [usize; 3] {
        let s = self.params.entries[0].value.shape();
        [s[0], s[1], s[2]]
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv1d
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let filters = self.params.value("filters")?;
        let bias = self.params.value("bias")?;
        let geom = Geometry::new(x, filters, bias)?;
        let patches = geom.im2col(x.data());
        let out = geom.apply(&patches, filters.data(), bias.data());
        self.cache = Some((geom, patches));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (geom, patches) = self.cache.as_ref().ok_or_else(|| missing_forward(self.kind()))?;
        let geom = *geom;
        check_upstream(self.kind(), &[geom.batch, geom.out_len, geom.c_out], upstream)?;
        let (rows, k, c_out) = (geom.rows(), geom.cols(), geom.c_out);
        let dy = upstream.data();

        let [filters, bias] = self.params.entries_mut() else { unreachable!() };
        gemm(c_out, rows, k, dy, true, patches, false, filters.grad.data_mut(), 1.0);
        add_column_sums(dy, c_out, bias.grad.data_mut());

        let mut dpatches = vec![0.0; rows * k];
        gemm(rows, c_out, k, dy, false, filters.value.data(), false, &mut dpatches, 0.0);
        let mut dx = vec![0.0; geom.batch * geom.length * geom.c_in];
        geom.col2im(&dpatches, &mut dx);
        Ok(Tensor::from_parts(vec![geom.batch, geom.length, geom.c_in], dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c_out, c_in, width] = self.filter_dims();
        match *input {
            [length, c] if c == c_in && length >= width => Ok(vec![length - width + 1, c_out]),
            _ => Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("input {input:?} for kernel {width} over {c_in} channels"),
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

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, values.len(), 1], values.to_vec()).unwrap()
    }

    fn kernel(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn shifted_identity_kernel() {
        let out = conv1d_forward(&seq(&[1.0, 2.0, 3.0, 4.0]), &kernel(&[1.0, 0.0]), &Tensor::zeros(&[1]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 3, 1]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn summing_kernel() {
        let out = conv1d_forward(&seq(&[1.0, 2.0, 3.0, 4.0]), &kernel(&[1.0, 1.0]), &Tensor::zeros(&[1]).unwrap()).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn too_short_input() {
        let r = conv1d_forward(&seq(&[1.0, 2.0]), &kernel(&[1.0, 1.0, 1.0]), &Tensor::zeros(&[1]).unwrap());
        assert!(r.is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut conv = Conv1d::new(1, 2, 2, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            conv.backward(&Tensor::zeros(&[1, 3, 2]).unwrap()),
            Err(Error::BackwardWithoutForward { .. })
        ));
    }

    #[test]
    fn output_shape_matches_forward() {
        let mut conv = Conv1d::new(3, 4, 5, &mut Rng::new(0)).unwrap();
        let x = Tensor::rng_normal(&mut Rng::new(1), &[2, 16, 3], 0.0, 1.0).unwrap();
        let y = conv.forward(&x, Mode::Train).unwrap();
        assert_eq!(conv.output_shape(&[16, 3]).unwrap(), y.shape()[1..]);
        assert!(conv.output_shape(&[4, 3]).is_err());
    }
}
