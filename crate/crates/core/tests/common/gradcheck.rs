//! Central finite-difference checks for every trainable component.
//!
//! Each `check_*` builds a randomized miniature instance, runs the analytic
//! backward pass and returns the largest relative error over all parameter
//! and input gradients. Relative error is `|a - n| / max(|a|, |n|, FLOOR)`;
//! the floor keeps entries that are both near zero from dominating.

use hybridsent::dataset::{ClassLabel, LabeledExample};
use hybridsent::encoder::{
    feed_forward, feed_forward_backward, layer_norm_rows, layer_norm_rows_backward,
    multi_head_attention, multi_head_attention_backward, Encoder, EncoderConfig, EncoderLayer,
};
use hybridsent::layers::{BiLstm, Conv1D, Dense, HeadActivation, LstmCell, MaxPool1D};
use hybridsent::param::{Param, Parameterized};
use hybridsent::text::TokenSequence;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{toy_model, toy_options};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Overwrite every parameter (biases and norm gains included) with random
/// values so that no gradient is trivially zero.
pub fn randomize<M: Parameterized + ?Sized>(m: &mut M, scale: f64, rng: &mut ChaCha8Rng) {
    m.visit_params_mut(&mut |p| {
        p.value.mapv_inplace(|_| rng.random_range(-scale..scale));
    });
}

fn with_param_value<M: Parameterized>(m: &mut M, tensor: usize, idx: usize, f: impl FnOnce(&mut f64)) {
    let mut t = 0;
    let mut f = Some(f);
    m.visit_params_mut(&mut |p: &mut Param| {
        if t == tensor {
            let v = p.value.iter_mut().nth(idx).expect("index in range");
            (f.take().expect("called once"))(v);
        }
        t += 1;
    });
}

/// Compare the gradients currently accumulated in `m` with central
/// differences of `loss`.
pub fn param_error<M: Parameterized>(m: &mut M, loss: impl Fn(&M) -> f64) -> f64 {
    let mut grads = Vec::new();
    m.visit_params(&mut |p| grads.push(p.grad.clone()));
    let mut worst = 0.0f64;
    for (t, g) in grads.iter().enumerate() {
        for (idx, &analytic) in g.iter().enumerate() {
            let mut orig = 0.0;
            with_param_value(m, t, idx, |v| {
                orig = *v;
                *v = orig + STEP;
            });
            let lp = loss(m);
            with_param_value(m, t, idx, |v| *v = orig - STEP);
            let lm = loss(m);
            with_param_value(m, t, idx, |v| *v = orig);
            worst = worst.max(rel_err(analytic, (lp - lm) / (2.0 * STEP)));
        }
    }
    worst
}

/// Compare `analytic` with central differences of `loss` around `x`.
pub fn input_error<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    analytic: &ndarray::Array<f64, D>,
    loss: impl Fn(&ndarray::Array<f64, D>) -> f64,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *xp.iter().nth(i).unwrap();
        *xp.iter_mut().nth(i).unwrap() = orig + STEP;
        let lp = loss(&xp);
        *xp.iter_mut().nth(i).unwrap() = orig - STEP;
        let lm = loss(&xp);
        *xp.iter_mut().nth(i).unwrap() = orig;
        worst = worst.max(rel_err(a, (lp - lm) / (2.0 * STEP)));
    }
    worst
}

fn dot2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

pub fn check_conv1d(kernel: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, k, filters) = (6, 3, 4);
    let mut conv = Conv1D::new(k, filters, kernel, &mut r);
    randomize(&mut conv, 0.8, &mut r);
    let x = random_matrix(len, k, 1.0, &mut r);
    let w = random_matrix(len, filters, 1.0, &mut r);
    let (_, cache) = conv.forward(x.view()).unwrap();
    conv.zero_grads();
    let dx = conv.backward(&cache, w.view());
    let loss_p = |c: &Conv1D| dot2(&c.forward(x.view()).unwrap().0, &w);
    let pe = param_error(&mut conv, loss_p);
    let ie = input_error(&x, &dx, |xx| dot2(&conv.forward(xx.view()).unwrap().0, &w));
    pe.max(ie)
}

pub fn check_maxpool(len: usize, pool: usize, stride: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mp = MaxPool1D::new(pool, stride).unwrap();
    let x = random_matrix(len, 3, 1.0, &mut r);
    let out_len = mp.output_len(len);
    let w = random_matrix(out_len, 3, 1.0, &mut r);
    let (_, cache) = mp.forward(x.view());
    let dx = mp.backward(&cache, w.view());
    input_error(&x, &dx, |xx| dot2(&mp.forward(xx.view()).0, &w))
}

pub fn check_dense(head: HeadActivation, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut d = Dense::new(5, 3, head, &mut r);
    randomize(&mut d, 0.8, &mut r);
    let x = Array1::from_shape_simple_fn(5, || r.random_range(-1.0..1.0));
    let w = Array1::from_shape_simple_fn(3, || r.random_range(-1.0..1.0));
    let (_, cache) = d.forward(x.view()).unwrap();
    d.zero_grads();
    let dx = d.backward(&cache, w.view());
    let pe = param_error(&mut d, |dd: &Dense| dd.forward(x.view()).unwrap().0.dot(&w));
    let ie = input_error(&x, &dx, |xx| d.forward(xx.view()).unwrap().0.dot(&w));
    pe.max(ie)
}

/// One cell step: parameters, input, previous hidden and cell state.
pub fn check_lstm_step(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (k, u) = (3, 4);
    let mut cell = LstmCell::new(k, u, &mut r);
    randomize(&mut cell, 0.8, &mut r);
    let v = |r: &mut ChaCha8Rng, n| Array1::from_shape_simple_fn(n, || r.random_range(-1.0..1.0));
    let (x, h0, c0) = (v(&mut r, k), v(&mut r, u), v(&mut r, u));
    let (wh, wc) = (v(&mut r, u), v(&mut r, u));
    let loss = |cell: &LstmCell, x: &Array1<f64>, h0: &Array1<f64>, c0: &Array1<f64>| {
        let (h, c) = cell.step(x.view(), h0.view(), c0.view()).unwrap();
        h.dot(&wh) + c.dot(&wc)
    };
    cell.zero_grads();
    let (dx, dh0, dc0) = cell.step_backward_single(x.view(), h0.view(), c0.view(), wh.view(), wc.view());
    let pe = param_error(&mut cell, |c: &LstmCell| loss(c, &x, &h0, &c0));
    let e1 = input_error(&x, &dx, |xx| loss(&cell, xx, &h0, &c0));
    let e2 = input_error(&h0, &dh0, |hh| loss(&cell, &x, hh, &c0));
    let e3 = input_error(&c0, &dc0, |cc| loss(&cell, &x, &h0, cc));
    pe.max(e1).max(e2).max(e3)
}

/// Full sequence through time, in either direction.
pub fn check_lstm_sequence(reverse: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, k, u) = (5, 3, 4);
    let mut cell = LstmCell::new(k, u, &mut r);
    randomize(&mut cell, 0.8, &mut r);
    let x = random_matrix(len, k, 1.0, &mut r);
    let w = random_matrix(len, u, 1.0, &mut r);
    let (_, cache) = cell.forward_sequence(x.view(), reverse).unwrap();
    cell.zero_grads();
    let dx = cell.backward_sequence(&cache, w.view());
    let pe = param_error(&mut cell, |c: &LstmCell| {
        dot2(&c.forward_sequence(x.view(), reverse).unwrap().0, &w)
    });
    let ie = input_error(&x, &dx, |xx| {
        dot2(&cell.forward_sequence(xx.view(), reverse).unwrap().0, &w)
    });
    pe.max(ie)
}

pub fn check_bilstm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, k, u) = (4, 3, 3);
    let mut bi = BiLstm::new(k, u, &mut r);
    randomize(&mut bi, 0.8, &mut r);
    let x = random_matrix(len, k, 1.0, &mut r);
    let w = random_matrix(len, 2 * u, 1.0, &mut r);
    let (_, cache) = bi.forward(x.view()).unwrap();
    bi.zero_grads();
    let dx = bi.backward(&cache, w.view());
    let pe = param_error(&mut bi, |b: &BiLstm| dot2(&b.forward(x.view()).unwrap().0, &w));
    let ie = input_error(&x, &dx, |xx| dot2(&bi.forward(xx.view()).unwrap().0, &w));
    pe.max(ie)
}

fn random_layer(hidden: usize, ffn: usize, r: &mut ChaCha8Rng) -> EncoderLayer {
    let mut layer = EncoderLayer::init(hidden, ffn, r);
    randomize(&mut layer, 0.6, r);
    layer
}

/// Multi-head attention with two padded key positions.
pub fn check_attention(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, hidden, heads) = (5, 4, 2);
    let mut layer = random_layer(hidden, 6, &mut r);
    let mask = [false, false, false, true, true];
    let x = random_matrix(len, hidden, 1.0, &mut r);
    let w = random_matrix(len, hidden, 1.0, &mut r);
    let (_, cache) = multi_head_attention(x.view(), &layer, heads, &mask).unwrap();
    layer.zero_grads();
    let dx = multi_head_attention_backward(&mut layer, &cache, &w);
    let f = |l: &EncoderLayer, xx: &Array2<f64>| {
        dot2(&multi_head_attention(xx.view(), l, heads, &mask).unwrap().0, &w)
    };
    let pe = param_error(&mut layer, |l: &EncoderLayer| f(l, &x));
    let ie = input_error(&x, &dx, |xx| f(&layer, xx));
    pe.max(ie)
}

pub fn check_layer_norm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, hidden) = (3, 5);
    let mut layer = random_layer(hidden, 4, &mut r);
    let x = random_matrix(len, hidden, 2.0, &mut r);
    let w = random_matrix(len, hidden, 1.0, &mut r);
    let (_, cache) = layer_norm_rows(&x, &layer.ln1_gamma, &layer.ln1_beta);
    layer.zero_grads();
    let (mut g, mut b) = (layer.ln1_gamma.clone(), layer.ln1_beta.clone());
    let dx = layer_norm_rows_backward(&cache, &mut g, &mut b, &w);
    layer.ln1_gamma = g;
    layer.ln1_beta = b;
    let f = |l: &EncoderLayer, xx: &Array2<f64>| dot2(&layer_norm_rows(xx, &l.ln1_gamma, &l.ln1_beta).0, &w);
    let pe = param_error(&mut layer, |l: &EncoderLayer| f(l, &x));
    let ie = input_error(&x, &dx, |xx| f(&layer, xx));
    pe.max(ie)
}

/// Position-wise feed-forward block with GELU.
pub fn check_feed_forward(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, hidden, ffn) = (3, 4, 6);
    let mut layer = random_layer(hidden, ffn, &mut r);
    let x = random_matrix(len, hidden, 1.5, &mut r);
    let w = random_matrix(len, hidden, 1.0, &mut r);
    let (_, cache) = feed_forward(&x, &layer);
    layer.zero_grads();
    let dx = feed_forward_backward(&mut layer, &cache, &w);
    let pe = param_error(&mut layer, |l: &EncoderLayer| dot2(&feed_forward(&x, l).0, &w));
    let ie = input_error(&x, &dx, |xx| dot2(&feed_forward(xx, &layer).0, &w));
    pe.max(ie)
}

fn small_encoder(r: &mut ChaCha8Rng) -> Encoder {
    let cfg = EncoderConfig {
        num_layers: 2,
        hidden: 4,
        heads: 2,
        max_positions: 5,
        ffn_dim: 6,
        dropout: 0.5,
        seed: 0,
    };
    let mut enc = Encoder::init(cfg, 7).unwrap();
    randomize(&mut enc, 0.6, r);
    enc
}

/// Token and position embedding lookup.
pub fn check_embedding(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut enc = small_encoder(&mut r);
    let ids = [3, 1, 3, 6, 0];
    let w = random_matrix(ids.len(), 4, 1.0, &mut r);
    enc.zero_grads();
    enc.embed_backward(&ids, w.view());
    param_error(&mut enc, |e: &Encoder| dot2(&e.embed(&ids).unwrap(), &w))
}

/// The whole encoder stack, inference mode, with padding.
pub fn check_encoder(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut enc = small_encoder(&mut r);
    let tokens = TokenSequence {
        ids: vec![2, 5, 1, 0, 0],
        true_length: 3,
    };
    let w = random_matrix(5, 4, 1.0, &mut r);
    let f = |e: &Encoder| {
        let mut rr = rng(0);
        dot2(&e.forward(&tokens, false, &mut rr).unwrap().0.matrix, &w)
    };
    let mut rr = rng(0);
    let (_, cache) = enc.forward(&tokens, false, &mut rr).unwrap();
    enc.zero_grads();
    enc.backward(&cache, w.view());
    param_error(&mut enc, f)
}

/// Loss gradient of a whole scenario model at `d = 6`, every parameter.
pub fn check_scenario(scenario: u8, head: HeadActivation, seed: u64) -> f64 {
    let d = 6;
    let vocab = 9;
    let opts = toy_options(3, head, 4);
    let mut model = toy_model(scenario, 3, 2, vocab, d, &opts, seed);
    let mut r = rng(seed);
    randomize(&mut model, 0.5, &mut r);
    let batch: Vec<LabeledExample> = (0..3)
        .map(|i| {
            let true_length = r.random_range(1..=d);
            let mut ids = vec![0; d];
            for id in ids.iter_mut().take(true_length) {
                *id = r.random_range(1..vocab);
            }
            LabeledExample {
                tokens: TokenSequence { ids, true_length },
                label: ClassLabel::new(i).unwrap(),
            }
        })
        .collect();
    let refs: Vec<&LabeledExample> = batch.iter().collect();
    model.batch_gradient(&refs, false, 0.0, &mut rng(0)).unwrap();
    param_error(&mut model, |m| m.loss(&batch).unwrap())
}
