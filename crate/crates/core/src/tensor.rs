//! Dense row-major `f64` tensors of rank 1 to 3.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Scale,
}

/// Right-hand side of an element-wise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    // Split on sign so exp never overflows.
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

fn ensure_finite(op: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{op} produced {} at element {i}", data[i]))),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let len = validate_shape(shape)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite(format!("fill value {fill}")));
        }
        Ok(Self { shape: shape.to_vec(), data: vec![fill; len] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {shape:?} needs {len} elements, got {}", data.len()),
            });
        }
        ensure_finite("from_vec", &data)?;
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Builds a tensor without validation. Callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert!(validate_shape(&shape).map(|n| n == data.len()).unwrap_or(false));
        Self { shape, data }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    /// Overwrites one element. The value must be finite.
    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("set value {value}")));
        }
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::InvalidArgument(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        let flat = index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| acc * d + i);
        self.data[flat] = value;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major reinterpretation under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} has {} elements, {shape:?} needs {len}", self.shape, self.data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self { shape: vec![c, r], data: out })
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::ShapeMismatch { op, detail: format!("expected rank 2, got {:?}", self.shape) }),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::ShapeMismatch { op, detail: format!("expected rank 3, got {:?}", self.shape) }),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let [m, k] = self.dims2("matmul")?;
        let [k2, n] = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        ensure_finite("matmul", &out)?;
        Ok(Self { shape: vec![m, n], data: out })
    }

    pub fn elementwise(&self, op: BinaryOp, rhs: Operand<'_>) -> Result<Tensor> {
        let f = |a: f64, b: f64| match op {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul | BinaryOp::Scale => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Max => a.max(b),
        };
        let data: Vec<f64> = match rhs {
            Operand::Scalar(b) => {
                if !b.is_finite() {
                    return Err(Error::NonFinite(format!("scalar operand {b}")));
                }
                if op == BinaryOp::Div && b == 0.0 {
                    return Err(Error::DivisionByZero { index: 0 });
                }
                self.data.iter().map(|&a| f(a, b)).collect()
            }
            Operand::Tensor(other) => {
                if other.shape != self.shape {
                    return Err(Error::ShapeMismatch {
                        op: "elementwise",
                        detail: format!("{:?} vs {:?}", self.shape, other.shape),
                    });
                }
                if op == BinaryOp::Div {
                    if let Some(i) = other.data.iter().position(|&b| b == 0.0) {
                        return Err(Error::DivisionByZero { index: i });
                    }
                }
                self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()
            }
        };
        ensure_finite("elementwise", &data)?;
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Mul, Operand::Tensor(other))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Div, Operand::Tensor(other))
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Max, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.elementwise(BinaryOp::Scale, Operand::Scalar(factor))
    }

    pub fn map_activation(&self, kind: Activation) -> Tensor {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&z| kind.apply(z)).collect() }
    }

    /// Gaussian draws, row-major, one `Rng::normal` per element.
    pub fn rng_normal(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
        let len = validate_shape(shape)?;
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("normal(mean={mean}, std={std})")));
        }
        let data = (0..len).map(|_| mean + std * rng.normal()).collect();
        Ok(Self { shape: shape.to_vec(), data })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// `c = a * b + beta * c` where `a` is logically `[m, k]` and `b` is `[k, n]`.
/// A `*_trans` flag means the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths are asserted above and the strides address exactly the
    // m*k, k*n and m*n elements of the three row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
