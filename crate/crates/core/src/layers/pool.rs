use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Max pooling over positions with "same" padding (padding never wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1D {
    pub pool: usize,
    pub stride: usize,
}

/// Winning input row for every output cell.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    in_len: usize,
    argmax: Array2<usize>,
}

impl Default for MaxPool1D {
    fn default() -> Self {
        MaxPool1D { pool: 2, stride: 2 }
    }
}

impl MaxPool1D {
    pub fn new(pool: usize, stride: usize) -> Result<Self> {
        if pool == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "pool size and stride must be >= 1".into(),
            ));
        }
        Ok(MaxPool1D { pool, stride })
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    /// `L x F` in, `ceil(L/stride) x F` out. Ties go to the first position.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MaxPoolCache) {
        let (len, f) = x.dim();
        let out_len = self.output_len(len);
        let pad_total = ((out_len.saturating_sub(1)) * self.stride + self.pool).saturating_sub(len);
        let pad_left = pad_total / 2;
        let mut out = Array2::zeros((out_len, f));
        let mut argmax = Array2::zeros((out_len, f));
        for o in 0..out_len {
            let start = (o * self.stride) as isize - pad_left as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.pool as isize).max(0) as usize).min(len);
            for c in 0..f {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = lo;
                for i in lo..hi {
                    if x[[i, c]] > best {
                        best = x[[i, c]];
                        best_i = i;
                    }
                }
                out[[o, c]] = best;
                argmax[[o, c]] = best_i;
            }
        }
        (out, MaxPoolCache { in_len: len, argmax })
    }

    /// Route each output gradient to its winning input row.
    pub fn backward(&self, cache: &MaxPoolCache, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let f = grad_out.ncols();
        let mut dx = Array2::zeros((cache.in_len, f));
        for ((o, c), &g) in grad_out.indexed_iter() {
            dx[[cache.argmax[[o, c]], c]] += g;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn windowed_max() {
        let p = MaxPool1D::new(2, 2).unwrap();
        let x = array![[1.0], [3.0], [2.0], [5.0]];
        let (y, cache) = p.forward(x.view());
        assert_eq!(y, array![[3.0], [5.0]]);
        let dx = p.backward(&cache, Array2::ones((2, 1)).view());
        assert_eq!(dx, array![[0.0], [1.0], [0.0], [1.0]]);
    }

    #[test]
    fn unit_pool_is_identity() {
        let p = MaxPool1D::new(1, 1).unwrap();
        let x = array![[1.0, -2.0], [0.5, 4.0], [-3.0, 0.0]];
        let (y, cache) = p.forward(x.view());
        assert_eq!(y, x);
        assert_eq!(p.backward(&cache, x.view()), x);
    }

    #[test]
    fn odd_lengths_and_ties() {
        let p = MaxPool1D::default();
        let x = array![[2.0], [2.0], [-1.0]];
        let (y, cache) = p.forward(x.view());
        assert_eq!(y.nrows(), 2);
        assert_eq!(y, array![[2.0], [-1.0]]);
        let dx = p.backward(&cache, array![[1.0], [1.0]].view());
        assert_eq!(dx, array![[1.0], [0.0], [1.0]]);
        assert!(MaxPool1D::new(0, 1).is_err());
    }

    #[test]
    fn padded_windows_never_win() {
        let p = MaxPool1D::new(3, 1).unwrap();
        let x = array![[-5.0], [-7.0], [-6.0]];
        let (y, _) = p.forward(x.view());
        assert_eq!(y, array![[-5.0], [-5.0], [-6.0]]);
    }
}
