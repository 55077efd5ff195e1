//! Trainable layers with hand-written backward passes.
//!
//! Every layer takes a single example (`L x k` matrices for sequences) and
//! returns its output plus a cache; `backward` consumes that cache, adds
//! parameter gradients into the layer's [`Param`](crate::param::Param)
//! buffers and returns the gradient with respect to the input.

mod conv;
mod dense;
mod dropout;
mod lstm;
mod pool;

pub use conv::{Conv1D, Conv1DCache};
pub use dense::{softmax, Dense, DenseCache, HeadActivation};
pub use dropout::Dropout;
pub use lstm::{BiLstm, BiLstmCache, LstmCache, LstmCell};
pub use pool::{MaxPool1D, MaxPoolCache};

/// Window size of every convolution (filter size 10).
pub const DEFAULT_KERNEL: usize = 10;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
