//! LSTM built from four sub-nets `p` (input), `g` (candidate), `f` (forget)
//! and `q` (output), each computing `b + x(t) U + h(t-1) W`:
//!
//! ```text
//! s(t) = sigmoid(f(t)) * s(t-1) + sigmoid(p(t)) * tanh(g(t))
//! h(t) = tanh(s(t)) * sigmoid(q(t))
//! ```
//!
//! Parameters are named `U_<n>` (`[inputs, cells]`), `W_<n>` (`[cells, cells]`)
//! and `b_<n>` (`[cells]`) for each sub-net `n`, in the order of [`GATES`].

use super::{add_column_sums, check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, sigmoid, Tensor};

pub const GATES: [&str; 4] = ["p", "g", "f", "q"];

/// Recurrent state carried between steps, `[batch, cells]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h_prev: Tensor,
    pub s_prev: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, cells: usize) -> Result<Self> {
        Ok(Self { h_prev: Tensor::zeros(&[batch, cells])?, s_prev: Tensor::zeros(&[batch, cells])? })
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    inputs: usize,
    cells: usize,
}

/// Parameter indices within `LayerParams`, per gate: (U, W, b).
fn gate_slots(params: &LayerParams) -> Result<[[usize; 3]; 4]> {
    let mut slots = [[0; 3]; 4];
    for (g, gate) in GATES.iter().enumerate() {
        for (k, prefix) in ["U", "W", "b"].iter().enumerate() {
            let name = format!("{prefix}_{gate}");
            slots[g][k] = params
                .index_of(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("lstm parameter '{name}' missing")))?;
        }
    }
    Ok(slots)
}

fn param_dims(params: &LayerParams, slots: &[[usize; 3]; 4]) -> Result<Dims> {
    let u = params.entries[slots[0][0]].value.shape();
    let (inputs, cells) = match *u {
        [i, c] => (i, c),
        _ => return Err(Error::ShapeMismatch { op: "lstm", detail: format!("U_p shape {u:?}") }),
    };
    for s in slots {
        let ok = params.entries[s[0]].value.shape() == [inputs, cells]
            && params.entries[s[1]].value.shape() == [cells, cells]
            && params.entries[s[2]].value.shape() == [cells];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                detail: format!("inconsistent sub-net shapes for {inputs} inputs, {cells} cells"),
            });
        }
    }
    Ok(Dims { inputs, cells })
}

/// Everything one step needs for its backward pass. Gate values are stored
/// after their nonlinearity.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    s_prev: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    f: Vec<f64>,
    q: Vec<f64>,
    tanh_s: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
}

fn step(
    params: &LayerParams,
    slots: &[[usize; 3]; 4],
    dims: Dims,
    batch: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    s_prev: Vec<f64>,
) -> StepCache {
    let Dims { inputs, cells } = dims;
    let mut pre: [Vec<f64>; 4] = Default::default();
    for (n, slot) in slots.iter().enumerate() {
        let e = &params.entries;
        let mut a = Vec::with_capacity(batch * cells);
        for _ in 0..batch {
            a.extend_from_slice(e[slot[2]].value.data());
        }
        gemm(batch, inputs, cells, &x, false, e[slot[0]].value.data(), false, &mut a, 1.0);
        gemm(batch, cells, cells, &h_prev, false, e[slot[1]].value.data(), false, &mut a, 1.0);
        pre[n] = a;
    }
    let [mut p, mut g, mut f, mut q] = pre;
    p.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    q.iter_mut().for_each(|v| *v = sigmoid(*v));
    let s: Vec<f64> = (0..batch * cells).map(|i| f[i] * s_prev[i] + p[i] * g[i]).collect();
    let tanh_s: Vec<f64> = s.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = tanh_s.iter().zip(&q).map(|(t, o)| t * o).collect();
    StepCache { x, h_prev, s_prev, p, g, f, q, tanh_s, s, h }
}

/// One recurrent step. Returns `h(t)` and the state to feed the next step.
pub fn lstm_step(x_t: &Tensor, state: &LstmState, params: &LayerParams) -> Result<(Tensor, LstmState)> {
    let slots = gate_slots(params)?;
    let dims = param_dims(params, &slots)?;
    let [batch, inputs] = x_t.dims2("lstm_step")?;
    let expect = [batch, dims.cells];
    if inputs != dims.inputs || state.h_prev.shape() != expect || state.s_prev.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            detail: format!(
                "x {:?}, h {:?}, s {:?} for {} inputs and {} cells",
                x_t.shape(),
                state.h_prev.shape(),
                state.s_prev.shape(),
                dims.inputs,
                dims.cells
            ),
        });
    }
    let c = step(params, &slots, dims, batch, x_t.data().to_vec(), state.h_prev.data().to_vec(), state.s_prev.data().to_vec());
    let h = Tensor::from_parts(expect.to_vec(), c.h);
    let next = LstmState { h_prev: h.clone(), s_prev: Tensor::from_parts(expect.to_vec(), c.s) };
    Ok((h, next))
}

fn run_sequence(x: &Tensor, params: &LayerParams) -> Result<(Vec<StepCache>, Dims, [usize; 2])> {
    let slots = gate_slots(params)?;
    let dims = param_dims(params, &slots)?;
    let [batch, length, inputs] = x.dims3("lstm_forward")?;
    if inputs != dims.inputs {
        return Err(Error::ShapeMismatch {
            op: "lstm_forward",
            detail: format!("input has {inputs} features, parameters expect {}", dims.inputs),
        });
    }
    let data = x.data();
    let mut h = vec![0.0; batch * dims.cells];
    let mut s = vec![0.0; batch * dims.cells];
    let mut caches = Vec::with_capacity(length);
    for t in 0..length {
        let mut xt = Vec::with_capacity(batch * inputs);
        for b in 0..batch {
            xt.extend_from_slice(&data[(b * length + t) * inputs..][..inputs]);
        }
        let c = step(params, &slots, dims, batch, xt, h, s);
        h = c.h.clone();
        s = c.s.clone();
        caches.push(c);
    }
    Ok((caches, dims, [batch, length]))
}

fn collect_output(caches: &[StepCache], cells: usize, batch: usize, return_sequences: bool) -> Tensor {
    let length = caches.len();
    if return_sequences {
        let mut out = vec![0.0; batch * length * cells];
        for (t, c) in caches.iter().enumerate() {
            for b in 0..batch {
                out[(b * length + t) * cells..][..cells].copy_from_slice(&c.h[b * cells..][..cells]);
            }
        }
        Tensor::from_parts(vec![batch, length, cells], out)
    } else {
        Tensor::from_parts(vec![batch, cells], caches[length - 1].h.clone())
    }
}

/// Runs the cell over `[batch, length, inputs]` from a zero state. Returns
/// `[batch, length, cells]` or, without `return_sequences`, the last `h`.
pub fn lstm_forward(x: &Tensor, params: &LayerParams, return_sequences: bool) -> Result<Tensor> {
    let (caches, dims, [batch, _]) = run_sequence(x, params)?;
    Ok(collect_output(&caches, dims.cells, batch, return_sequences))
}

#[derive(Debug, Clone)]
pub struct Lstm {
    params: LayerParams,
    return_sequences: bool,
    cache: Option<(Vec<StepCache>, Dims, [usize; 2])>,
}

impl Lstm {
    /// `U` and `W` drawn from N(0, `weight_std`), biases zero.
    pub fn new(inputs: usize, cells: usize, return_sequences: bool, weight_std: f64, rng: &mut Rng) -> Result<Self> {
        let mut params = LayerParams::new();
        for gate in GATES {
            params.insert(&format!("U_{gate}"), Tensor::rng_normal(rng, &[inputs, cells], 0.0, weight_std)?)?;
            params.insert(&format!("W_{gate}"), Tensor::rng_normal(rng, &[cells, cells], 0.0, weight_std)?)?;
            params.insert(&format!("b_{gate}"), Tensor::zeros(&[cells])?)?;
        }
        Ok(Self { params, return_sequences, cache: None })
    }

    pub fn from_params(params: LayerParams, return_sequences: bool) -> Result<Self> {
        let slots = gate_slots(&params)?;
        param_dims(&params, &slots)?;
        Ok(Self { params, return_sequences, cache: None })
    }

    pub fn cells(&self) -> usize {
        self.params.entries[1].value.shape()[0]
    }

    fn inputs(&self) -> usize {
        self.params.entries[0].value.shape()[0]
    }
}

impl Layer for Lstm {
    fn kind(&self) -> LayerKind {
        LayerKind::Lstm
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (caches, dims, bl) = run_sequence(x, &self.params)?;
        let out = collect_output(&caches, dims.cells, bl[0], self.return_sequences);
        self.cache = Some((caches, dims, bl));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (caches, dims, [batch, length]) = self.cache.as_ref().ok_or_else(|| missing_forward(LayerKind::Lstm))?;
        let Dims { inputs, cells } = *dims;
        let (batch, length) = (*batch, *length);
        let expected: Vec<usize> = if self.return_sequences { vec![batch, length, cells] } else { vec![batch, cells] };
        check_upstream(LayerKind::Lstm, &expected, upstream)?;
        let slots = gate_slots(&self.params)?;
        let dy = upstream.data();
        let n = batch * cells;

        let mut dx = vec![0.0; batch * length * inputs];
        let mut dh_next = vec![0.0; n];
        let mut ds_next = vec![0.0; n];
        let mut dgate: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for t in (0..length).rev() {
            let c = &caches[t];
            let mut dh = dh_next.clone();
            if self.return_sequences {
                for b in 0..batch {
                    let src = &dy[(b * length + t) * cells..][..cells];
                    for (d, g) in dh[b * cells..][..cells].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            } else if t == length - 1 {
                dh.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
            }
            for i in 0..n {
                let ds = dh[i] * c.q[i] * (1.0 - c.tanh_s[i] * c.tanh_s[i]) + ds_next[i];
                dgate[0][i] = ds * c.g[i] * c.p[i] * (1.0 - c.p[i]);
                dgate[1][i] = ds * c.p[i] * (1.0 - c.g[i] * c.g[i]);
                dgate[2][i] = ds * c.s_prev[i] * c.f[i] * (1.0 - c.f[i]);
                dgate[3][i] = dh[i] * c.tanh_s[i] * c.q[i] * (1.0 - c.q[i]);
                ds_next[i] = ds * c.f[i];
            }
            let mut dxt = vec![0.0; batch * inputs];
            dh_next.fill(0.0);
            let entries = self.params.entries_mut();
            for (slot, d) in slots.iter().zip(&dgate) {
                gemm(inputs, batch, cells, &c.x, true, d, false, entries[slot[0]].grad.data_mut(), 1.0);
                gemm(cells, batch, cells, &c.h_prev, true, d, false, entries[slot[1]].grad.data_mut(), 1.0);
                add_column_sums(d, cells, entries[slot[2]].grad.data_mut());
                gemm(batch, cells, inputs, d, false, entries[slot[0]].value.data(), true, &mut dxt, 1.0);
                gemm(batch, cells, cells, d, false, entries[slot[1]].value.data(), true, &mut dh_next, 1.0);
            }
            for b in 0..batch {
                dx[(b * length + t) * inputs..][..inputs].copy_from_slice(&dxt[b * inputs..][..inputs]);
            }
        }
        Ok(Tensor::from_parts(vec![batch, length, inputs], dx))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [length, i] if i == self.inputs() => {
                Ok(if self.return_sequences { vec![length, self.cells()] } else { vec![self.cells()] })
            }
            _ => Err(Error::ShapeMismatch {
                op: "lstm",
                detail: format!("input {input:?} for {} inputs", self.inputs()),
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

    fn zero_params(inputs: usize, cells: usize) -> LayerParams {
        Lstm::new(inputs, cells, true, 0.0, &mut Rng::new(0)).unwrap().params
    }

    #[test]
    fn zero_weights_zero_state() {
        let params = zero_params(2, 3);
        let x = Tensor::new(&[1, 2], 0.7).unwrap();
        let (h, st) = lstm_step(&x, &LstmState::zeros(1, 3).unwrap(), &params).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(st.s_prev.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_unit_state() {
        let params = zero_params(1, 1);
        let state = LstmState { h_prev: Tensor::zeros(&[1, 1]).unwrap(), s_prev: Tensor::new(&[1, 1], 1.0).unwrap() };
        let (h, st) = lstm_step(&Tensor::zeros(&[1, 1]).unwrap(), &state, &params).unwrap();
        assert_eq!(st.s_prev.data(), &[0.5]);
        assert!((h.data()[0] - 0.5f64.tanh() * 0.5).abs() < 1e-15);
        assert!((h.data()[0] - 0.23106).abs() < 1e-5);
    }

    #[test]
    fn input_width_mismatch() {
        let params = zero_params(4, 2);
        let x = Tensor::zeros(&[1, 3]).unwrap();
        assert!(lstm_step(&x, &LstmState::zeros(1, 2).unwrap(), &params).is_err());
    }

    #[test]
    fn sequence_output_shapes() {
        let mut rng = Rng::new(3);
        let params = Lstm::new(2, 5, true, 0.1, &mut rng).unwrap().params;
        let x = Tensor::rng_normal(&mut rng, &[3, 4, 2], 0.0, 1.0).unwrap();
        assert_eq!(lstm_forward(&x, &params, true).unwrap().shape(), &[3, 4, 5]);
        let last = lstm_forward(&x, &params, false).unwrap();
        assert_eq!(last.shape(), &[3, 5]);
        let seq = lstm_forward(&x, &params, true).unwrap();
        for b in 0..3 {
            for c in 0..5 {
                assert_eq!(seq.get(&[b, 3, c]), last.get(&[b, c]));
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_sequence() {
        let params = zero_params(2, 3);
        let x = Tensor::rng_normal(&mut Rng::new(1), &[2, 5, 2], 0.0, 1.0).unwrap();
        assert!(lstm_forward(&x, &params, true).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
