use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

use super::Mode;

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: SplitMix64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            rng: SplitMix64::new(seed),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if self.rng.next_f64() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let mut out = x.clone();
        out.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        out
    }

    pub fn backward(&self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        if let Some(mask) = &self.mask {
            g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        g
    }
}
