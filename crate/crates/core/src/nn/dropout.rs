use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub(crate) fn dropout_mask(n: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Stateless dropout with its own seeded generator.
pub fn dropout_forward(x: &Tensor, rate: f64, mode: Mode, rng_seed: u64) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mask = dropout_mask(x.len(), rate, &mut rng);
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, k)| *v *= k);
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Tensor {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = Some(None);
            return x.clone();
        }
        let mask = dropout_mask(x.len(), self.rate, rng);
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, k)| *v *= k);
        self.mask = Some(Some(mask));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::State("dropout backward without forward".into()))?;
        let mut dx = dy.clone();
        if let Some(m) = mask {
            dx.data_mut().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
        }
        Ok(dx)
    }
}
