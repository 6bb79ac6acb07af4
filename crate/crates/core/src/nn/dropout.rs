use super::{check_upstream, missing_forward, Layer, LayerKind, LayerParams, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
/// An element is kept when `rng.uniform() >= rate`.
fn draw_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.uniform() >= rate { keep } else { 0.0 }).collect()
}

/// Identity in infer mode; inverted dropout in train mode.
pub fn dropout_forward(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = draw_mask(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: Rng,
    params: LayerParams,
    // None means the last forward was an identity.
    mask: Option<Vec<f64>>,
    shape: Option<Vec<usize>>,
    frozen: bool,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { rate, rng: Rng::new(seed), params: LayerParams::new(), mask: None, shape: None, frozen: false })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// While frozen, train-mode forwards reuse the previous mask when the
    /// input size matches. Used by finite-difference checks.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

impl Layer for Dropout {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.shape = Some(x.shape().to_vec());
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == x.len());
        if !reuse {
            self.mask = Some(draw_mask(x.len(), self.rate, &mut self.rng));
        }
        let mask = self.mask.as_ref().unwrap();
        let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let shape = self.shape.as_ref().ok_or_else(|| missing_forward(LayerKind::Dropout))?;
        check_upstream(LayerKind::Dropout, shape, upstream)?;
        Ok(match &self.mask {
            None => upstream.clone(),
            Some(mask) => {
                let data = upstream.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::from_parts(shape.clone(), data)
            }
        })
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

    fn freeze_randomness(&mut self, frozen: bool) {
        self.set_frozen(frozen);
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_and_zero_rate_are_identity() {
        let x = Tensor::rng_normal(&mut Rng::new(0), &[4, 5], 0.0, 1.0).unwrap();
        let mut rng = Rng::new(1);
        assert_eq!(dropout_forward(&x, 0.5, Mode::Infer, &mut rng).unwrap(), x);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
    }

    #[test]
    fn rate_one_rejected() {
        let x = Tensor::zeros(&[2]).unwrap();
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut Rng::new(0)).is_err());
        assert!(Dropout::new(1.0, 0).is_err());
    }

    #[test]
    fn expectation_preserved() {
        let n = 100_000;
        let x = Tensor::new(&[n], 1.0).unwrap();
        let y = dropout_forward(&x, 0.5, Mode::Train, &mut Rng::new(77)).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_uses_the_forward_mask() {
        let mut d = Dropout::new(0.5, 3).unwrap();
        let x = Tensor::new(&[1, 64], 1.0).unwrap();
        let y = d.forward(&x, Mode::Train).unwrap();
        let g = d.backward(&x).unwrap();
        assert_eq!(y, g);
    }
}
