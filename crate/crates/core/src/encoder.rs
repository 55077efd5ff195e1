//! Miniature BERT-style encoder producing one contextual vector per token.
//!
//! Token and learned position embeddings feed a stack of post-norm
//! transformer layers:
//!
//! ```text
//! y = LayerNorm(x + Dropout(MultiHeadAttention(x)))
//! z = LayerNorm(y + Dropout(GELU(y W1 + b1) W2 + b2))
//! ```
//!
//! Padding positions (at and after `true_length`) are masked as attention
//! keys, and their output rows are zeroed so they contribute nothing
//! downstream.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, corrupt, read_err};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::param::{Param, Parameterized};
use crate::text::TokenSequence;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

const WEIGHTS_MAGIC: &[u8; 8] = b"HSENCWTS";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// 2 layers, hidden size 128, 2 heads.
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            hidden: 128,
            heads: 2,
            max_positions: crate::text::DEFAULT_SEQ_LEN,
            ffn_dim: 512,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder sizes must all be positive".into(),
            ));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::InvalidArgument("max_positions must be >= 1".into()));
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Weights of one transformer layer. Projection matrices map row vectors:
/// `q = x wq + bq`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: Param,
    pub bq: Param,
    pub wk: Param,
    pub bk: Param,
    pub wv: Param,
    pub bv: Param,
    pub wo: Param,
    pub bo: Param,
    pub ln1_gamma: Param,
    pub ln1_beta: Param,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub ln2_gamma: Param,
    pub ln2_beta: Param,
}

impl EncoderLayer {
    pub fn init<R: Rng>(hidden: usize, ffn: usize, rng: &mut R) -> Self {
        let mut n = |r, c| Param::normal(r, c, INIT_STD, rng);
        EncoderLayer {
            wq: n(hidden, hidden),
            bq: Param::zeros(1, hidden),
            wk: n(hidden, hidden),
            bk: Param::zeros(1, hidden),
            wv: n(hidden, hidden),
            bv: Param::zeros(1, hidden),
            wo: n(hidden, hidden),
            bo: Param::zeros(1, hidden),
            ln1_gamma: Param::filled(1, hidden, 1.0),
            ln1_beta: Param::zeros(1, hidden),
            w1: n(hidden, ffn),
            b1: Param::zeros(1, ffn),
            w2: n(ffn, hidden),
            b2: Param::zeros(1, hidden),
            ln2_gamma: Param::filled(1, hidden, 1.0),
            ln2_beta: Param::zeros(1, hidden),
        }
    }

    fn params(&self) -> [&Param; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn params_mut(&mut self) -> [&mut Param; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    fn expected_shapes(hidden: usize, ffn: usize) -> [(usize, usize); 16] {
        let (h, f) = (hidden, ffn);
        [
            (h, h),
            (1, h),
            (h, h),
            (1, h),
            (h, h),
            (1, h),
            (h, h),
            (1, h),
            (1, h),
            (1, h),
            (h, f),
            (1, f),
            (f, h),
            (1, h),
            (1, h),
            (1, h),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    /// `vocab x hidden`
    pub token_embedding: Param,
    /// `max_positions x hidden`
    pub position_embedding: Param,
    pub layers: Vec<EncoderLayer>,
}

impl Parameterized for EncoderLayer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for p in self.params() {
            f(p);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in self.params_mut() {
            f(p);
        }
    }
}

impl Parameterized for EncoderWeights {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.token_embedding);
        f(&self.position_embedding);
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.token_embedding);
        f(&mut self.position_embedding);
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }
}

impl EncoderWeights {
    /// Normal(0, 0.02) matrices, zero biases, unit norm gains.
    pub fn init(cfg: &EncoderConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let token_embedding = Param::normal(vocab_size, cfg.hidden, INIT_STD, &mut rng);
        let position_embedding = Param::normal(cfg.max_positions, cfg.hidden, INIT_STD, &mut rng);
        let layers = (0..cfg.num_layers)
            .map(|_| EncoderLayer::init(cfg.hidden, cfg.ffn_dim, &mut rng))
            .collect();
        Ok(EncoderWeights {
            token_embedding,
            position_embedding,
            layers,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.value.nrows()
    }

    fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let mut expected = vec![
            (self.vocab_size(), cfg.hidden),
            (cfg.max_positions, cfg.hidden),
        ];
        for _ in 0..cfg.num_layers {
            expected.extend(EncoderLayer::expected_shapes(cfg.hidden, cfg.ffn_dim));
        }
        let actual = self.param_shapes();
        if actual != expected {
            return Err(Error::ShapeMismatch(
                "encoder weights do not match the configuration".into(),
            ));
        }
        Ok(())
    }

    /// Binary weights file:
    ///
    /// ```text
    /// magic "HSENCWTS" | version u32
    /// num_layers u32 | hidden u32 | heads u32 | max_positions u32 | ffn_dim u32 | vocab u32 | dropout f64
    /// matrices in visiting order: token table, position table, then per layer
    ///   wq bq wk bk wv bv wo bo ln1_gamma ln1_beta w1 b1 w2 b2 ln2_gamma ln2_beta
    /// ```
    ///
    /// All integers and floats little-endian; each matrix is `rows u64, cols
    /// u64` then row-major `f64`.
    pub fn write<W: Write>(&self, cfg: &EncoderConfig, mut w: W) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
        for v in [
            cfg.num_layers,
            cfg.hidden,
            cfg.heads,
            cfg.max_positions,
            cfg.ffn_dim,
            self.vocab_size(),
        ] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_f64::<LittleEndian>(cfg.dropout)?;
        let mut res = Ok(());
        self.visit_params(&mut |p| {
            if res.is_ok() {
                res = binio::write_matrix(&mut w, &p.value);
            }
        });
        res
    }

    pub fn to_bytes(&self, cfg: &EncoderConfig) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(cfg, &mut buf).expect("writing to a Vec");
        buf
    }

    /// Parse a weights file and check it against `cfg`. The dropout rate and
    /// seed stored in `cfg` are not compared.
    pub fn from_bytes(bytes: &[u8], cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut remaining = bytes.len() as u64;
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(read_err)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(corrupt("not an encoder weights file"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(read_err)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: WEIGHTS_VERSION,
            });
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        }
        let _dropout = r.read_f64::<LittleEndian>().map_err(read_err)?;
        remaining -= 8 + 4 + 24 + 8;
        let [layers, hidden, heads, max_pos, ffn, vocab] = dims;
        if (layers, hidden, heads, max_pos, ffn) != (cfg.num_layers, cfg.hidden, cfg.heads, cfg.max_positions, cfg.ffn_dim) {
            return Err(Error::ShapeMismatch(format!(
                "weights file has layers={layers} hidden={hidden} heads={heads} positions={max_pos} ffn={ffn}, \
                 configuration wants layers={} hidden={} heads={} positions={} ffn={}",
                cfg.num_layers, cfg.hidden, cfg.heads, cfg.max_positions, cfg.ffn_dim
            )));
        }
        let mut next = || binio::read_matrix(&mut r, &mut remaining).map(Param::new);
        let token_embedding = next()?;
        let position_embedding = next()?;
        let mut layer_list = Vec::with_capacity(layers);
        for _ in 0..layers {
            let mut l = EncoderLayer::init(1, 1, &mut ChaCha8Rng::seed_from_u64(0));
            for p in l.params_mut() {
                *p = next()?;
            }
            layer_list.push(l);
        }
        if remaining != 0 {
            return Err(corrupt("trailing bytes after encoder weights"));
        }
        let w = EncoderWeights {
            token_embedding,
            position_embedding,
            layers: layer_list,
        };
        if w.vocab_size() != vocab {
            return Err(corrupt("vocabulary size disagrees with header"));
        }
        w.check_shapes(cfg)?;
        Ok(w)
    }

    pub fn save(&self, cfg: &EncoderConfig, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes(cfg))
    }

    pub fn load(path: &Path, cfg: &EncoderConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, cfg)
    }
}

/// Where encoder weights come from.
#[derive(Debug, Clone)]
pub enum WeightSource<'a> {
    Seed(u64),
    File(&'a Path),
}

/// Random initialisation from a seed, or a checked load from a weights file.
pub fn init_or_load_weights(
    cfg: &EncoderConfig,
    vocab_size: usize,
    source: WeightSource<'_>,
) -> Result<EncoderWeights> {
    match source {
        WeightSource::Seed(seed) => EncoderWeights::init(
            &EncoderConfig {
                seed,
                ..cfg.clone()
            },
            vocab_size,
        ),
        WeightSource::File(path) => {
            let w = EncoderWeights::load(path, cfg)?;
            if w.vocab_size() != vocab_size {
                return Err(Error::ShapeMismatch(format!(
                    "weights cover {} tokens, vocabulary has {vocab_size}",
                    w.vocab_size()
                )));
            }
            Ok(w)
        }
    }
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta` for one vector.
pub fn layer_norm(x: ArrayView1<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.mapv(|v| (v - mean) * inv) * gamma + beta
}

/// Intermediates of [`layer_norm_rows`].
#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer norm with learned scale and shift.
pub fn layer_norm_rows(x: &Array2<f64>, gamma: &Param, beta: &Param) -> (Array2<f64>, NormCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
        *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let i = *inv;
        row.mapv_inplace(|v| (v - mean) * i);
    }
    let y = &xhat * &gamma.value + &beta.value;
    (y, NormCache { xhat, inv_std })
}

/// Gradient of [`layer_norm_rows`]; accumulates into `gamma` and `beta`.
pub fn layer_norm_rows_backward(
    cache: &NormCache,
    gamma: &mut Param,
    beta: &mut Param,
    dy: &Array2<f64>,
) -> Array2<f64> {
    gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &gamma.value;
    let h = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / h;
        let mean_gx = g.dot(&xh) / h;
        let inv = cache.inv_std[r];
        dx.row_mut(r)
            .assign(&((&g - mean_g - &(&xh * mean_gx)) * inv));
    }
    dx
}

/// Intermediates of one attention call.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `L x L` row-stochastic matrix per head.
    pub probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

/// Scaled dot-product attention over `heads` column blocks, followed by the
/// output projection. `mask[j] == true` marks key `j` as padding.
pub fn multi_head_attention(
    x: ArrayView2<f64>,
    layer: &EncoderLayer,
    heads: usize,
    mask: &[bool],
) -> Result<(Array2<f64>, AttentionCache)> {
    let (len, hidden) = x.dim();
    if mask.len() != len || layer.wq.shape() != (hidden, hidden) || hidden % heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "attention input {:?}, mask {}, wq {:?}, heads {heads}",
            x.dim(),
            mask.len(),
            layer.wq.shape()
        )));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::AllMasked);
    }
    let dh = hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&layer.wq.value) + &layer.bq.value;
    let k = x.dot(&layer.wk.value) + &layer.bk.value;
    let v = x.dot(&layer.wv.value) + &layer.bv.value;
    let mut concat = Array2::zeros((len, hidden));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for mut row in scores.rows_mut() {
            for (j, s) in row.iter_mut().enumerate() {
                if mask[j] {
                    *s = f64::NEG_INFINITY;
                }
            }
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|s| (s - m).exp());
            let z = row.sum();
            row /= z;
        }
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = concat.dot(&layer.wo.value) + &layer.bo.value;
    Ok((
        out,
        AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
        },
    ))
}

/// Gradient of [`multi_head_attention`] with respect to its input;
/// accumulates the projection gradients into `layer`.
pub fn multi_head_attention_backward(
    layer: &mut EncoderLayer,
    cache: &AttentionCache,
    dout: &Array2<f64>,
) -> Array2<f64> {
    let heads = cache.probs.len();
    let hidden = cache.x.ncols();
    let dh = hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    layer.wo.grad += &cache.concat.t().dot(dout);
    layer.bo.grad += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dconcat = dout.dot(&layer.wo.value.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let do_h = dconcat.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&do_h));
        let dp = do_h.dot(&cache.v.slice(cols).t());
        let mut ds = &dp * p;
        let row_dot = ds.sum_axis(Axis(1));
        for (mut row, (&rd, prow)) in ds.rows_mut().into_iter().zip(row_dot.iter().zip(p.rows())) {
            row.zip_mut_with(&prow, |d, &pv| *d -= rd * pv);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    layer.wq.grad += &xt.dot(&dq);
    layer.wk.grad += &xt.dot(&dk);
    layer.wv.grad += &xt.dot(&dv);
    layer.bq.grad += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    layer.bk.grad += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    layer.bv.grad += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    dq.dot(&layer.wq.value.t()) + dk.dot(&layer.wk.value.t()) + dv.dot(&layer.wv.value.t())
}

/// Intermediates of [`feed_forward`].
#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

/// Position-wise `gelu(x w1 + b1) w2 + b2`.
pub fn feed_forward(x: &Array2<f64>, layer: &EncoderLayer) -> (Array2<f64>, FfnCache) {
    let pre = x.dot(&layer.w1.value) + &layer.b1.value;
    let act = pre.mapv(gelu);
    let out = act.dot(&layer.w2.value) + &layer.b2.value;
    (
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

/// Gradient of [`feed_forward`]; accumulates into `w1`, `b1`, `w2`, `b2`.
pub fn feed_forward_backward(
    layer: &mut EncoderLayer,
    cache: &FfnCache,
    dout: &Array2<f64>,
) -> Array2<f64> {
    layer.w2.grad += &cache.act.t().dot(dout);
    layer.b2.grad += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dpre = dout.dot(&layer.w2.value.t());
    dpre.zip_mut_with(&cache.pre, |d, &p| *d *= gelu_grad(p));
    layer.w1.grad += &cache.x.t().dot(&dpre);
    layer.b1.grad += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
    dpre.dot(&layer.w1.value.t())
}

#[derive(Debug, Clone)]
struct LayerCache {
    attn: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    ln1: NormCache,
    ffn: FfnCache,
    ffn_mask: Option<Array2<f64>>,
    ln2: NormCache,
}

/// Per-token encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding {
    /// `L x hidden`; rows at masked positions are zero.
    pub matrix: Array2<f64>,
    /// `true` at padding positions.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Vec<usize>,
    mask: Vec<bool>,
    layers: Vec<LayerCache>,
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub weights: EncoderWeights,
}

impl Parameterized for Encoder {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.weights.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.weights.visit_params_mut(f)
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, weights: EncoderWeights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Encoder { config, weights })
    }

    pub fn init(config: EncoderConfig, vocab_size: usize) -> Result<Self> {
        let weights = EncoderWeights::init(&config, vocab_size)?;
        Ok(Encoder { config, weights })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Token plus position embedding rows, `L x hidden`.
    pub fn embed(&self, ids: &[usize]) -> Result<Array2<f64>> {
        let vocab = self.weights.vocab_size();
        if ids.len() > self.config.max_positions {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {} exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        let mut x = Array2::zeros((ids.len(), self.config.hidden));
        for (t, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::IdOutOfRange { id, size: vocab });
            }
            let mut row = x.row_mut(t);
            row += &self.weights.token_embedding.value.row(id);
            row += &self.weights.position_embedding.value.row(t);
        }
        Ok(x)
    }

    /// Encode a sequence. Dropout is applied only when `train` is set, drawing
    /// from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tokens: &TokenSequence,
        train: bool,
        rng: &mut R,
    ) -> Result<(SequenceEmbedding, EncoderCache)> {
        let x = self.embed(&tokens.ids)?;
        let mask: Vec<bool> = (0..tokens.ids.len()).map(|t| t >= tokens.true_length).collect();
        let (out, layers) = self.forward_embedded(x, &mask, train, rng)?;
        Ok((
            SequenceEmbedding {
                matrix: out,
                mask: mask.clone(),
            },
            EncoderCache {
                ids: tokens.ids.clone(),
                mask,
                layers,
            },
        ))
    }

    fn forward_embedded<R: Rng + ?Sized>(
        &self,
        mut x: Array2<f64>,
        mask: &[bool],
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        let drop = Dropout::new(self.config.dropout)?;
        let mut caches = Vec::with_capacity(self.weights.layers.len());
        for layer in &self.weights.layers {
            let (a, attn) = multi_head_attention(x.view(), layer, self.config.heads, mask)?;
            let (a, attn_mask) = drop.forward(&a, train, rng);
            let (y, ln1) = layer_norm_rows(&(&x + &a), &layer.ln1_gamma, &layer.ln1_beta);
            let (f, ffn) = feed_forward(&y, layer);
            let (f, ffn_mask) = drop.forward(&f, train, rng);
            let (z, ln2) = layer_norm_rows(&(&y + &f), &layer.ln2_gamma, &layer.ln2_beta);
            caches.push(LayerCache {
                attn,
                attn_mask,
                ln1,
                ffn,
                ffn_mask,
                ln2,
            });
            x = z;
        }
        for (t, &m) in mask.iter().enumerate() {
            if m {
                x.row_mut(t).fill(0.0);
            }
        }
        Ok((x, caches))
    }

    /// Backpropagate `grad` (gradient w.r.t. the output matrix) into every
    /// weight, including the embedding tables.
    pub fn backward(&mut self, cache: &EncoderCache, grad: ArrayView2<f64>) {
        let dx = self.backward_to_embeddings(cache, grad);
        self.embed_backward(&cache.ids, dx.view());
    }

    /// Gradient of [`Encoder::embed`]: scatter `dx` rows into the token and
    /// position tables.
    pub fn embed_backward(&mut self, ids: &[usize], dx: ArrayView2<f64>) {
        for (t, &id) in ids.iter().enumerate() {
            let mut tok = self.weights.token_embedding.grad.row_mut(id);
            tok += &dx.row(t);
            let mut pos = self.weights.position_embedding.grad.row_mut(t);
            pos += &dx.row(t);
        }
    }

    /// Like [`Encoder::backward`] but stops at the summed input embeddings
    /// and returns their gradient.
    pub fn backward_to_embeddings(&mut self, cache: &EncoderCache, grad: ArrayView2<f64>) -> Array2<f64> {
        let mut dz = grad.to_owned();
        for (t, &m) in cache.mask.iter().enumerate() {
            if m {
                dz.row_mut(t).fill(0.0);
            }
        }
        for (layer, lc) in self.weights.layers.iter_mut().zip(&cache.layers).rev() {
            let ds2 = layer_norm_rows_backward(&lc.ln2, &mut layer.ln2_gamma, &mut layer.ln2_beta, &dz);
            let df = Dropout::backward(lc.ffn_mask.as_ref(), ds2.clone());
            let dy = ds2 + feed_forward_backward(layer, &lc.ffn, &df);

            let ds1 = layer_norm_rows_backward(&lc.ln1, &mut layer.ln1_gamma, &mut layer.ln1_beta, &dy);
            let da = Dropout::backward(lc.attn_mask.as_ref(), ds1.clone());
            dz = ds1 + multi_head_attention_backward(layer, &lc.attn, &da);
        }
        dz
    }

    /// Inference-mode forward starting from precomputed input embeddings.
    pub fn forward_from_embeddings(&self, x: Array2<f64>, mask: &[bool]) -> Result<(Array2<f64>, EncoderCache)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = vec![0; x.nrows()];
        let (out, layers) = self.forward_embedded(x, mask, false, &mut rng)?;
        Ok((
            out,
            EncoderCache {
                ids,
                mask: mask.to_vec(),
                layers,
            },
        ))
    }

    /// Attention probabilities from the last forward pass, per layer and head.
    pub fn attention_probs(cache: &EncoderCache) -> Vec<&[Array2<f64>]> {
        cache.layers.iter().map(|l| l.attn.probs.as_slice()).collect()
    }
}

/// Free-function form of [`Encoder::forward`].
pub fn encoder_forward<R: Rng + ?Sized>(
    tokens: &TokenSequence,
    encoder: &Encoder,
    train: bool,
    rng: &mut R,
) -> Result<SequenceEmbedding> {
    encoder.forward(tokens, train, rng).map(|(e, _)| e)
}
