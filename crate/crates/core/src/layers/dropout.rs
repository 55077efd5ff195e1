use ndarray::{Array, Dimension};
use rand::Rng;

use crate::error::{Error, Result};

/// Inverted dropout: at training time each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns the output and, in training mode, the scaling mask to reuse in
    /// the backward pass.
    pub fn forward<D: Dimension, R: Rng + ?Sized>(
        &self,
        x: &Array<f64, D>,
        train: bool,
        rng: &mut R,
    ) -> (Array<f64, D>, Option<Array<f64, D>>) {
        if !train || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = x.map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep });
        (x * &mask, Some(mask))
    }

    pub fn backward<D: Dimension>(mask: Option<&Array<f64, D>>, grad: Array<f64, D>) -> Array<f64, D> {
        match mask {
            Some(m) => grad * m,
            None => grad,
        }
    }
}
