use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Param, Parameterized};

/// 1D convolution over token positions with "same" zero padding, stride 1 and
/// ReLU: `C_i = relu(W . X[i-p .. i-p+h] + b)` with `p = (h-1)/2`.
///
/// `weight` is `filters x (h*k)`; column `r*k + c` multiplies feature `c` of
/// the `r`-th row in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1D {
    pub weight: Param,
    pub bias: Param,
    kernel: usize,
    in_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1DCache {
    patches: Array2<f64>,
    pre: Array2<f64>,
}

impl Conv1D {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, filters: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel >= 1 && in_dim >= 1 && filters >= 1);
        let fan_in = kernel * in_dim;
        let fan_out = kernel * filters;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Conv1D {
            weight: Param::uniform(filters, fan_in, limit, rng),
            bias: Param::zeros(1, filters),
            kernel,
            in_dim,
        }
    }

    pub fn from_params(weight: Param, bias: Param, kernel: usize) -> Result<Self> {
        let (filters, cols) = weight.shape();
        if kernel == 0 || cols % kernel != 0 || bias.shape() != (1, filters) {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {:?} / bias {:?} with kernel {kernel}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Conv1D {
            weight,
            bias,
            kernel,
            in_dim: cols / kernel,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn filters(&self) -> usize {
        self.weight.value.nrows()
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (len, k) = x.dim();
        let h = self.kernel;
        let pad = self.pad_left() as isize;
        let mut patches = Array2::zeros((len, h * k));
        for i in 0..len {
            for r in 0..h {
                let src = i as isize - pad + r as isize;
                if src >= 0 && (src as usize) < len {
                    patches
                        .slice_mut(s![i, r * k..(r + 1) * k])
                        .assign(&x.row(src as usize));
                }
            }
        }
        patches
    }

    /// `L x k` in, `L x filters` out.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Conv1DCache)> {
        if x.ncols() != self.in_dim || x.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv1d expects L x {} input with L >= 1, got {:?}",
                self.in_dim,
                x.dim()
            )));
        }
        let patches = self.im2col(x);
        let pre = patches.dot(&self.weight.value.t()) + &self.bias.value;
        let out = pre.mapv(|v| v.max(0.0));
        Ok((out, Conv1DCache { patches, pre }))
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, cache: &Conv1DCache, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let mut dpre = grad_out.to_owned();
        ndarray::Zip::from(&mut dpre)
            .and(&cache.pre)
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
        self.weight.grad += &dpre.t().dot(&cache.patches);
        self.bias.grad += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dpatches = dpre.dot(&self.weight.value);

        let len = dpatches.nrows();
        let (h, k) = (self.kernel, self.in_dim);
        let pad = self.pad_left() as isize;
        let mut dx = Array2::zeros((len, k));
        for i in 0..len {
            for r in 0..h {
                let src = i as isize - pad + r as isize;
                if src >= 0 && (src as usize) < len {
                    let mut row = dx.row_mut(src as usize);
                    row += &dpatches.slice(s![i, r * k..(r + 1) * k]);
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv1D {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (len, h) in [(100, 10), (1, 10), (7, 1), (5, 4), (3, 3), (2, 9)] {
            let conv = Conv1D::new(3, 4, h, &mut rng);
            let (y, _) = conv.forward(Array2::ones((len, 3)).view()).unwrap();
            assert_eq!(y.dim(), (len, 4));
        }
    }

    #[test]
    fn bias_only_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv1D::new(2, 3, 10, &mut rng);
        conv.bias.value.fill(0.5);
        let (y, _) = conv.forward(Array2::zeros((12, 2)).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_convolution() {
        let conv = Conv1D::from_params(
            Param::new(array![[1.0, 0.0, -1.0]]),
            Param::zeros(1, 1),
            3,
        )
        .unwrap();
        let x = array![[1.0], [2.0], [3.0]];
        let (y, cache) = conv.forward(x.view()).unwrap();
        // position 1: 1*1 + 0*2 - 1*3 = -2 -> relu -> 0
        assert_eq!(cache.pre[[1, 0]], -2.0);
        assert_eq!(y[[1, 0]], 0.0);
        // position 0: 1*pad + 0*1 - 1*2 = -2; position 2: 1*2 - 0 = 2
        assert_eq!(cache.pre[[0, 0]], -2.0);
        assert_eq!(y[[2, 0]], 2.0);
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1D::new(3, 2, 2, &mut rng);
        assert!(conv.forward(Array2::zeros((4, 2)).view()).is_err());
        assert!(conv.forward(Array2::zeros((0, 3)).view()).is_err());
    }
}
