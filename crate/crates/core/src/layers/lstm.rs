use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Param, Parameterized};

use super::sigmoid;

/// One LSTM direction. The four gates are stacked in the order
/// input, forget, output, candidate:
///
/// ```text
/// i = sig(W_i x + U_i h + b_i)      f = sig(W_f x + U_f h + b_f)
/// o = sig(W_o x + U_o h + b_o)      g = tanh(W_c x + U_c h + b_c)
/// c' = i*g + f*c                    h' = o*tanh(c')
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4u x k`
    pub w: Param,
    /// `4u x u`
    pub u: Param,
    /// `1 x 4u`
    pub b: Param,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    gates: Array1<f64>,
    tanh_c: Array1<f64>,
}

/// Per-step intermediates of one pass, in processing order.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepCache>,
    reverse: bool,
}

impl LstmCell {
    /// Glorot-uniform input weights, uniform recurrent weights, zero bias
    /// except a forget-gate bias of 1.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, units: usize, rng: &mut R) -> Self {
        let lim_w = (6.0 / (in_dim + 4 * units) as f64).sqrt();
        let lim_u = (6.0 / (5 * units) as f64).sqrt();
        let mut b = Param::zeros(1, 4 * units);
        b.value.slice_mut(s![0, units..2 * units]).fill(1.0);
        LstmCell {
            w: Param::uniform(4 * units, in_dim, lim_w, rng),
            u: Param::uniform(4 * units, units, lim_u, rng),
            b,
        }
    }

    pub fn zeros(in_dim: usize, units: usize) -> Self {
        LstmCell {
            w: Param::zeros(4 * units, in_dim),
            u: Param::zeros(4 * units, units),
            b: Param::zeros(1, 4 * units),
        }
    }

    pub fn from_params(w: Param, u: Param, b: Param) -> Result<Self> {
        let units = u.shape().1;
        if w.shape().0 != 4 * units || u.shape().0 != 4 * units || b.shape() != (1, 4 * units) {
            return Err(Error::ShapeMismatch(format!(
                "lstm W {:?}, U {:?}, b {:?}",
                w.shape(),
                u.shape(),
                b.shape()
            )));
        }
        Ok(LstmCell { w, u, b })
    }

    pub fn units(&self) -> usize {
        self.u.value.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.ncols()
    }

    fn gates(&self, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> Array1<f64> {
        let u = self.units();
        let mut a = self.w.value.dot(&x) + self.u.value.dot(&h_prev) + self.b.value.row(0);
        a.slice_mut(s![..3 * u]).mapv_inplace(sigmoid);
        a.slice_mut(s![3 * u..]).mapv_inplace(f64::tanh);
        a
    }

    /// One time step: `(h_t, c_t)`.
    pub fn step(
        &self,
        x: ArrayView1<f64>,
        h_prev: ArrayView1<f64>,
        c_prev: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check(x.len(), h_prev.len(), c_prev.len())?;
        let (h, c, _, _) = self.step_inner(x, h_prev, c_prev);
        Ok((h, c))
    }

    fn check(&self, k: usize, h: usize, c: usize) -> Result<()> {
        if k != self.in_dim() || h != self.units() || c != self.units() {
            return Err(Error::ShapeMismatch(format!(
                "lstm cell with k = {}, units = {} got x: {k}, h: {h}, c: {c}",
                self.in_dim(),
                self.units()
            )));
        }
        Ok(())
    }

    fn step_inner(
        &self,
        x: ArrayView1<f64>,
        h_prev: ArrayView1<f64>,
        c_prev: ArrayView1<f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let u = self.units();
        let gates = self.gates(x, h_prev);
        let i = gates.slice(s![..u]);
        let f = gates.slice(s![u..2 * u]);
        let o = gates.slice(s![2 * u..3 * u]);
        let g = gates.slice(s![3 * u..]);
        let c = &i * &g + &f * &c_prev;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        (h, c, gates, tanh_c)
    }

    /// Run over all rows of `x` (`L x k`), last to first when `reverse`.
    /// Row `t` of the output is the hidden state after consuming row `t`.
    pub fn forward_sequence(&self, x: ArrayView2<f64>, reverse: bool) -> Result<(Array2<f64>, LstmCache)> {
        let (len, k) = x.dim();
        self.check(k, self.units(), self.units())?;
        let u = self.units();
        let mut out = Array2::zeros((len, u));
        let mut h = Array1::zeros(u);
        let mut c = Array1::zeros(u);
        let mut steps = Vec::with_capacity(len);
        for n in 0..len {
            let t = if reverse { len - 1 - n } else { n };
            let xt = x.row(t);
            let (h_new, c_new, gates, tanh_c) = self.step_inner(xt, h.view(), c.view());
            out.row_mut(t).assign(&h_new);
            steps.push(StepCache {
                x: xt.to_owned(),
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates,
                tanh_c,
            });
        }
        Ok((out, LstmCache { steps, reverse }))
    }

    /// Backpropagation through time. `grad_out` is `L x u`, aligned with the
    /// forward output. Accumulates parameter gradients, returns `L x k`.
    pub fn backward_sequence(&mut self, cache: &LstmCache, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let u = self.units();
        let len = cache.steps.len();
        let mut dx = Array2::zeros((len, self.in_dim()));
        let mut dh_next = Array1::<f64>::zeros(u);
        let mut dc_next = Array1::<f64>::zeros(u);
        for n in (0..len).rev() {
            let t = if cache.reverse { len - 1 - n } else { n };
            let st = &cache.steps[n];
            let (da, dc_prev) =
                self.step_backward(st, (&grad_out.row(t) + &dh_next).view(), dc_next.view());
            dx.row_mut(t).assign(&self.w.value.t().dot(&da));
            dh_next = self.u.value.t().dot(&da);
            dc_next = dc_prev;
        }
        dx
    }

    /// Returns the gate pre-activation gradient and the gradient into `c_prev`.
    fn step_backward(
        &mut self,
        st: &StepCache,
        dh: ArrayView1<f64>,
        dc_in: ArrayView1<f64>,
    ) -> (Array1<f64>, Array1<f64>) {
        let u = self.units();
        let i = st.gates.slice(s![..u]);
        let f = st.gates.slice(s![u..2 * u]);
        let o = st.gates.slice(s![2 * u..3 * u]);
        let g = st.gates.slice(s![3 * u..]);

        let dc = &dc_in + &(&dh * &o * &st.tanh_c.mapv(|t| 1.0 - t * t));
        let mut da = Array1::zeros(4 * u);
        for j in 0..u {
            let (ij, fj, oj, gj) = (i[j], f[j], o[j], g[j]);
            da[j] = dc[j] * gj * ij * (1.0 - ij);
            da[u + j] = dc[j] * st.c_prev[j] * fj * (1.0 - fj);
            da[2 * u + j] = dh[j] * st.tanh_c[j] * oj * (1.0 - oj);
            da[3 * u + j] = dc[j] * ij * (1.0 - gj * gj);
        }
        let dc_prev = &dc * &f;

        let da_col = da.view().insert_axis(Axis(1));
        self.w.grad += &da_col.dot(&st.x.view().insert_axis(Axis(0)));
        self.u.grad += &da_col.dot(&st.h_prev.view().insert_axis(Axis(0)));
        let mut b = self.b.grad.row_mut(0);
        b += &da;
        (da, dc_prev)
    }

    /// Gradients of a single step, for checking the cell in isolation.
    /// Returns `(dx, dh_prev, dc_prev)` and accumulates parameter gradients.
    pub fn step_backward_single(
        &mut self,
        x: ArrayView1<f64>,
        h_prev: ArrayView1<f64>,
        c_prev: ArrayView1<f64>,
        dh: ArrayView1<f64>,
        dc: ArrayView1<f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let (_, _, gates, tanh_c) = self.step_inner(x, h_prev, c_prev);
        let st = StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            c_prev: c_prev.to_owned(),
            gates,
            tanh_c,
        };
        let (da, dc_prev) = self.step_backward(&st, dh, dc);
        (self.w.value.t().dot(&da), self.u.value.t().dot(&da), dc_prev)
    }
}

impl Parameterized for LstmCell {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w);
        f(&self.u);
        f(&self.b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.u);
        f(&mut self.b);
    }
}

/// Forward and backward LSTMs over the same sequence; position `t` of the
/// output is `[h_fwd_t ; h_bwd_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, units: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: LstmCell::new(in_dim, units, rng),
            backward: LstmCell::new(in_dim, units, rng),
        }
    }

    pub fn from_cells(forward: LstmCell, backward: LstmCell) -> Result<Self> {
        if forward.units() != backward.units() || forward.in_dim() != backward.in_dim() {
            return Err(Error::ShapeMismatch(
                "bidirectional halves must share input width and units".into(),
            ));
        }
        Ok(BiLstm { forward, backward })
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn in_dim(&self) -> usize {
        self.forward.in_dim()
    }

    /// `L x k` in, `L x 2u` out. Both directions start from zero state.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, BiLstmCache)> {
        let (hf, fwd) = self.forward.forward_sequence(x, false)?;
        let (hb, bwd) = self.backward.forward_sequence(x, true)?;
        let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same row count");
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward(&mut self, cache: &BiLstmCache, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let u = self.units();
        let dxf = self
            .forward
            .backward_sequence(&cache.fwd, grad_out.slice(s![.., ..u]));
        let dxb = self
            .backward
            .backward_sequence(&cache.bwd, grad_out.slice(s![.., u..]));
        dxf + dxb
    }
}

impl Parameterized for BiLstm {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.forward.visit_params(f);
        self.backward.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.forward.visit_params_mut(f);
        self.backward.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cell_values() {
        let cell = LstmCell::zeros(3, 2);
        let x = array![1.0, -2.0, 0.5];
        let (h, c) = cell.step(x.view(), Array1::zeros(2).view(), Array1::zeros(2).view()).unwrap();
        assert_eq!(h, Array1::zeros(2));
        assert_eq!(c, Array1::zeros(2));

        let (h, c) = cell
            .step(x.view(), Array1::zeros(2).view(), Array1::ones(2).view())
            .unwrap();
        assert!(c.iter().all(|&v| v == 0.5));
        // 0.5 * tanh(0.5), evaluated independently
        assert!(h.iter().all(|&v| (v - 0.231_058_578_630_004_9).abs() < 1e-12));
    }

    #[test]
    fn bilstm_shapes_and_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64).sin());
        let bi = BiLstm::new(3, 4, &mut rng);
        let (y, _) = bi.forward(x.view()).unwrap();
        assert_eq!(y.dim(), (5, 8));

        let zero = BiLstm::from_cells(LstmCell::zeros(3, 4), LstmCell::zeros(3, 4)).unwrap();
        let (y, _) = zero.forward(x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_directions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = LstmCell::new(3, 2, &mut rng);
        let bi = BiLstm::from_cells(cell.clone(), cell).unwrap();
        let (y, _) = bi.forward(array![[0.3, -0.1, 0.8]].view()).unwrap();
        assert_eq!(y.slice(s![0, ..2]), y.slice(s![0, 2..]));
    }

    #[test]
    fn palindrome_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = LstmCell::new(2, 3, &mut rng);
        let bi = BiLstm::from_cells(cell.clone(), cell).unwrap();
        let x = array![[0.2, -0.4], [1.0, 0.3], [0.2, -0.4]];
        let (y, _) = bi.forward(x.view()).unwrap();
        for t in 0..3 {
            let mirror = 2 - t;
            assert_eq!(y.slice(s![t, ..3]), y.slice(s![mirror, 3..]));
        }
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let cell = LstmCell::zeros(3, 2);
        assert!(cell
            .step(Array1::zeros(2).view(), Array1::zeros(2).view(), Array1::zeros(2).view())
            .is_err());
        assert!(cell.forward_sequence(Array2::zeros((4, 5)).view(), false).is_err());
        assert!(BiLstm::from_cells(LstmCell::zeros(3, 2), LstmCell::zeros(3, 3)).is_err());
    }
}
