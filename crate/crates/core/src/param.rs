//! Trainable tensors with gradient buffers, and the Adam optimiser.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A trainable matrix and its accumulated gradient. Vectors are stored as
/// `1 x n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Param::new(Array2::from_elem((rows, cols), v))
    }

    pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        Param::new(Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng)))
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        Param::new(Array2::from_shape_simple_fn((rows, cols), || {
            rng.random_range(-limit..limit)
        }))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything holding [`Param`]s. Visiting order must be stable: optimiser
/// state and serialised archives are keyed by it.
pub trait Parameterized {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        self.visit_params(&mut |p| shapes.push(p.shape()));
        shapes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per visited parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: Vec<(Array2<f64>, Array2<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter of `model`, using the
/// gradients currently stored in the parameters. The step is rejected, leaving
/// parameters and state untouched, if any gradient is non-finite.
pub fn adam_step<M: Parameterized + ?Sized>(
    model: &mut M,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut bad = None;
    let mut index = 0;
    model.visit_params(&mut |p| {
        if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
            bad = Some(index);
        }
        index += 1;
    });
    if let Some(index) = bad {
        return Err(Error::NonFiniteGradient { index });
    }

    if state.moments.is_empty() {
        model.visit_params(&mut |p| {
            state.moments.push((
                Array2::zeros(p.value.raw_dim()),
                Array2::zeros(p.value.raw_dim()),
            ))
        });
    }
    if state.moments.len() != index {
        return Err(Error::ShapeMismatch(format!(
            "optimiser tracks {} parameters, model has {index}",
            state.moments.len()
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut moments = state.moments.iter_mut();
    model.visit_params_mut(&mut |p| {
        let (m, v) = moments.next().expect("counted above");
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(m)
            .and(v)
            .for_each(|w, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
    });
    Ok(())
}
