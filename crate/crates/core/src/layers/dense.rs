use ndarray::{Array1, ArrayView1, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Param, Parameterized};

use super::sigmoid;

/// Output activation of the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadActivation {
    /// Independent per-class sigmoids.
    Sigmoid,
    Softmax,
    /// Sigmoids divided by their sum, as Keras does when categorical
    /// cross-entropy is applied to sigmoid outputs.
    #[default]
    NormalizedSigmoid,
}

impl HeadActivation {
    pub fn name(self) -> &'static str {
        match self {
            HeadActivation::Sigmoid => "sigmoid",
            HeadActivation::Softmax => "softmax",
            HeadActivation::NormalizedSigmoid => "normalized-sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(HeadActivation::Sigmoid),
            "softmax" => Ok(HeadActivation::Softmax),
            "normalized-sigmoid" => Ok(HeadActivation::NormalizedSigmoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown head activation `{other}`"
            ))),
        }
    }
}

/// Fully connected layer `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`
    pub weight: Param,
    /// `1 x outputs`
    pub bias: Param,
    pub activation: HeadActivation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array1<f64>,
    output: Array1<f64>,
    /// Raw sigmoids, kept for the normalized head.
    sigmoids: Option<Array1<f64>>,
}

pub fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: HeadActivation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            weight: Param::uniform(outputs, inputs, limit, rng),
            bias: Param::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, DenseCache)> {
        if x.len() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let z = self.weight.value.dot(&x) + self.bias.value.row(0);
        let (output, sigmoids) = match self.activation {
            HeadActivation::Sigmoid => (z.mapv(sigmoid), None),
            HeadActivation::Softmax => (softmax(&z), None),
            HeadActivation::NormalizedSigmoid => {
                let s = z.mapv(sigmoid);
                (&s / s.sum(), Some(s))
            }
        };
        Ok((
            output.clone(),
            DenseCache {
                input: x.to_owned(),
                output,
                sigmoids,
            },
        ))
    }

    /// `grad_out` is the gradient with respect to the activated output.
    pub fn backward(&mut self, cache: &DenseCache, grad_out: ArrayView1<f64>) -> Array1<f64> {
        let p = &cache.output;
        let dz = match self.activation {
            HeadActivation::Sigmoid => &grad_out * &p.mapv(|v| v * (1.0 - v)),
            HeadActivation::Softmax => {
                let dot = grad_out.dot(p);
                p * &grad_out.mapv(|g| g - dot)
            }
            HeadActivation::NormalizedSigmoid => {
                let s = cache.sigmoids.as_ref().expect("cached by forward");
                let dot = grad_out.dot(p);
                let total = s.sum();
                grad_out.mapv(|g| (g - dot) / total) * &s.mapv(|v| v * (1.0 - v))
            }
        };
        let dz_col = dz.view().insert_axis(Axis(1));
        self.weight.grad += &dz_col.dot(&cache.input.view().insert_axis(Axis(0)));
        let mut b = self.bias.grad.row_mut(0);
        b += &dz;
        self.weight.value.t().dot(&dz)
    }
}

impl Parameterized for Dense {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
